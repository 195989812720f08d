//! Choice-panel data model and empirical frequencies.
//!
//! A [`Panel`] holds unbalanced individual histories of choices in
//! `{0, …, J}`, optionally with fixed-width covariate vectors and an initial
//! duration count. The module provides:
//!
//! - CSV ingestion ([`load_panel`]) with a configurable column mapping,
//! - sub-history splitting into all contiguous fixed-length windows
//!   ([`split_subhistories`]),
//! - empirical history frequencies ([`history_frequencies`]) feeding the
//!   closed-form marginal-effect estimators,
//! - the pooled empirical transition matrix with marginal shares and
//!   persistence ([`empirical_transition_matrix`]).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// One individual's observed history.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    /// Opaque identifier (unique ids are not required).
    pub id: String,
    /// Choices, one per period, each in `{0, …, num_alternatives−1}`.
    pub y: Vec<u8>,
    /// Optional covariate vectors, one per period, all of equal width.
    pub x: Option<Vec<Vec<f64>>>,
    /// Number of consecutive pre-sample periods spent in the same choice as
    /// the first observed period. `None` when unknown (treated as 0 where a
    /// default is needed).
    pub d1: Option<u32>,
}

impl Individual {
    /// Observed length T_i.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    /// True when the history is empty (never the case in a valid panel).
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Pre-sample duration credit at each in-sample position: element `p` is
    /// the number of consecutive periods before `p` (in-sample periods plus,
    /// when the run reaches the panel start, the pre-sample `d1` count) with
    /// the same choice as `y[p]`. The second component is `false` when the
    /// value is a truncated lower bound because `d1` was not observed.
    pub fn initial_durations(&self) -> Vec<(u32, bool)> {
        let mut out = Vec::with_capacity(self.y.len());
        let mut current = (self.d1.unwrap_or(0), self.d1.is_some());
        out.push(current);
        for p in 1..self.y.len() {
            current = if self.y[p] == self.y[p - 1] {
                (current.0 + 1, current.1)
            } else {
                (0, true)
            };
            out.push(current);
        }
        out
    }
}

/// An unbalanced panel of choice histories.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    individuals: Vec<Individual>,
    num_alternatives: usize,
}

impl Panel {
    /// Build a panel, validating every invariant: choices in range, lengths
    /// ≥ 2, covariate widths equal across all rows and individuals.
    pub fn new(individuals: Vec<Individual>, num_alternatives: usize) -> Result<Self> {
        if num_alternatives < 2 {
            return Err(Error::invalid(format!(
                "num_alternatives must be ≥ 2, got {num_alternatives}"
            )));
        }
        let mut width: Option<usize> = None;
        let mut has_x: Option<bool> = None;
        for ind in &individuals {
            if ind.len() < 2 {
                return Err(Error::data(format!(
                    "individual '{}' has {} period(s); at least 2 are required",
                    ind.id,
                    ind.len()
                )));
            }
            for &c in &ind.y {
                if usize::from(c) >= num_alternatives {
                    return Err(Error::data(format!(
                        "individual '{}' has choice {} outside 0..{}",
                        ind.id,
                        c,
                        num_alternatives - 1
                    )));
                }
            }
            let this_has_x = ind.x.is_some();
            if *has_x.get_or_insert(this_has_x) != this_has_x {
                return Err(Error::data(
                    "covariates must be present for all individuals or none".into(),
                ));
            }
            if let Some(x) = &ind.x {
                if x.len() != ind.y.len() {
                    return Err(Error::data(format!(
                        "individual '{}': covariate sequence length {} != history length {}",
                        ind.id,
                        x.len(),
                        ind.y.len()
                    )));
                }
                for row in x {
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::data(format!(
                            "individual '{}': non-finite covariate value",
                            ind.id
                        )));
                    }
                    match width {
                        None => width = Some(row.len()),
                        Some(w) if w != row.len() => {
                            return Err(Error::data(format!(
                                "individual '{}': covariate width {} != {}",
                                ind.id,
                                row.len(),
                                w
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(Panel {
            individuals,
            num_alternatives,
        })
    }

    /// The individuals, in stored order.
    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    /// Number of alternatives J+1.
    pub fn num_alternatives(&self) -> usize {
        self.num_alternatives
    }

    /// Number of individuals N.
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    /// True when the panel has no individuals.
    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Covariate width K, when covariates are present.
    pub fn num_covariates(&self) -> Option<usize> {
        self.individuals
            .iter()
            .find_map(|ind| ind.x.as_ref().and_then(|x| x.first().map(Vec::len)))
    }

    /// Shortest observed history length, if any individuals exist.
    pub fn min_len(&self) -> Option<usize> {
        self.individuals.iter().map(Individual::len).min()
    }
}

/// Column mapping for CSV ingestion.
///
/// Covariate columns are `x1..xK` with the configured prefix; the optional
/// duration column is read from each individual's first row.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    /// Individual identifier column (string-valued).
    pub id: String,
    /// Time index column (integers; must be gap-free within an individual).
    pub t: String,
    /// Choice column (integers in `0..num_alternatives`).
    pub y: String,
    /// Prefix for covariate columns (`x` matches `x1`, `x2`, …).
    pub x_prefix: String,
    /// Initial-duration column, meaningful on each individual's first row.
    pub d1: String,
    /// Expected number of alternatives; inferred as `max(y)+1` (at least 2)
    /// when `None`.
    pub num_alternatives: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            t: "t".into(),
            y: "y".into(),
            x_prefix: "x".into(),
            d1: "d1".into(),
            num_alternatives: None,
        }
    }
}

struct RawRow {
    t: i64,
    y: i64,
    x: Vec<f64>,
    d1: Option<i64>,
}

/// Read a panel from CSV. Rows may arrive unsorted; they are grouped by id
/// (first-appearance order) and sorted by `t` within each individual. Gaps in
/// `t` within an individual are an error.
pub fn load_panel<R: Read>(source: R, schema: &CsvSchema) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);

    let id_col = col(&schema.id)
        .ok_or_else(|| Error::data(format!("missing mandatory column '{}'", schema.id)))?;
    let t_col = col(&schema.t)
        .ok_or_else(|| Error::data(format!("missing mandatory column '{}'", schema.t)))?;
    let y_col = col(&schema.y)
        .ok_or_else(|| Error::data(format!("missing mandatory column '{}'", schema.y)))?;
    let d1_col = col(&schema.d1);

    // Covariate columns are x1..xK, contiguous from 1.
    let mut x_cols = Vec::new();
    for k in 1.. {
        match col(&format!("{}{}", schema.x_prefix, k)) {
            Some(idx) => x_cols.push(idx),
            None => break,
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let ctx = |what: &str| format!("row {}: {}", line + 2, what);
        let id = record
            .get(id_col)
            .ok_or_else(|| Error::data(ctx("missing id field")))?
            .to_string();
        let t: i64 = record
            .get(t_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::data(ctx("non-integer t")))?;
        let y: i64 = record
            .get(y_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::data(ctx("non-integer y")))?;
        let mut x = Vec::with_capacity(x_cols.len());
        for (k, &xc) in x_cols.iter().enumerate() {
            let v: f64 = record
                .get(xc)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::data(ctx(&format!("non-numeric x{}", k + 1))))?;
            x.push(v);
        }
        let d1 = match d1_col {
            Some(dc) => {
                let raw = record.get(dc).unwrap_or("");
                if raw.is_empty() {
                    None
                } else {
                    Some(
                        raw.parse::<i64>()
                            .map_err(|_| Error::data(ctx("non-integer d1")))?,
                    )
                }
            }
            None => None,
        };
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(RawRow { t, y, x, d1 });
    }

    let num_alternatives = match schema.num_alternatives {
        Some(j) => j,
        None => rows
            .values()
            .flat_map(|rs| rs.iter().map(|r| r.y))
            .max()
            .map(|m| (m.max(1) + 1) as usize)
            .unwrap_or(2),
    };

    let mut individuals = Vec::with_capacity(order.len());
    for id in order {
        let mut rs = rows.remove(&id).expect("id collected above");
        rs.sort_by_key(|r| r.t);
        for pair in rs.windows(2) {
            if pair[1].t == pair[0].t {
                return Err(Error::data(format!(
                    "individual '{}': duplicate time index {}",
                    id, pair[0].t
                )));
            }
            if pair[1].t != pair[0].t + 1 {
                return Err(Error::data(format!(
                    "individual '{}': time gap between t={} and t={}",
                    id, pair[0].t, pair[1].t
                )));
            }
        }
        let mut y = Vec::with_capacity(rs.len());
        for r in &rs {
            if r.y < 0 || r.y as usize >= num_alternatives {
                return Err(Error::data(format!(
                    "individual '{}': choice {} outside 0..{}",
                    id,
                    r.y,
                    num_alternatives - 1
                )));
            }
            y.push(r.y as u8);
        }
        let x = if x_cols.is_empty() {
            None
        } else {
            Some(rs.iter().map(|r| r.x.clone()).collect())
        };
        let d1 = match rs.first().and_then(|r| r.d1) {
            Some(v) if v < 0 => {
                return Err(Error::data(format!(
                    "individual '{}': negative initial duration {}",
                    id, v
                )))
            }
            Some(v) => Some(v as u32),
            None => None,
        };
        individuals.push(Individual { id, y, x, d1 });
    }
    Panel::new(individuals, num_alternatives)
}

/// [`load_panel`] from a file path.
pub fn load_panel_path(path: &Path, schema: &CsvSchema) -> Result<Panel> {
    let file = std::fs::File::open(path)?;
    load_panel(file, schema)
}

/// Write a panel back to CSV in the ingestion schema (used by the CLI's
/// `simulate` and `split` subcommands).
pub fn write_panel_csv(panel: &Panel) -> String {
    let k = panel.num_covariates().unwrap_or(0);
    let has_d1 = panel.individuals().iter().any(|ind| ind.d1.is_some());
    let mut out = String::from("id,t,y");
    for j in 1..=k {
        out.push_str(&format!(",x{j}"));
    }
    if has_d1 {
        out.push_str(",d1");
    }
    out.push('\n');
    for ind in panel.individuals() {
        for (t, &y) in ind.y.iter().enumerate() {
            out.push_str(&format!("{},{},{}", ind.id, t + 1, y));
            if let Some(x) = &ind.x {
                for v in &x[t] {
                    out.push_str(&format!(",{v}"));
                }
            }
            if has_d1 {
                if t == 0 {
                    match ind.d1 {
                        Some(d) => out.push_str(&format!(",{d}")),
                        None => out.push(','),
                    }
                } else {
                    out.push(',');
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Which windows to take from each history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Every contiguous window of the requested length.
    AllContiguous,
    /// Only the first window of each individual.
    FirstOnly,
}

/// Split each history into all contiguous windows of length `t`.
/// Individuals shorter than `t` are dropped; each window gets the composite
/// id `origid#start` (1-based start period) and an initial-duration count
/// reconstructed from the pre-window history.
pub fn split_subhistories(panel: &Panel, t: usize) -> Result<Panel> {
    windows(panel, t, WindowMode::AllContiguous)
}

/// Split with an explicit [`WindowMode`].
pub fn windows(panel: &Panel, t: usize, mode: WindowMode) -> Result<Panel> {
    if t < 2 {
        return Err(Error::invalid(format!("window length must be ≥ 2, got {t}")));
    }
    let mut out = Vec::new();
    for ind in panel.individuals() {
        if ind.len() < t {
            continue;
        }
        let durations = ind.initial_durations();
        let starts: Vec<usize> = match mode {
            WindowMode::AllContiguous => (0..=ind.len() - t).collect(),
            WindowMode::FirstOnly => vec![0],
        };
        for p in starts {
            let (dur, known) = durations[p];
            out.push(Individual {
                id: format!("{}#{}", ind.id, p + 1),
                y: ind.y[p..p + t].to_vec(),
                x: ind.x.as_ref().map(|x| x[p..p + t].to_vec()),
                d1: if known { Some(dur) } else { None },
            });
        }
    }
    Panel::new(out, panel.num_alternatives())
}

/// Bit-exact key for a covariate history (used for exact matching).
pub(crate) fn x_bits(x: &[Vec<f64>]) -> Vec<u64> {
    x.iter()
        .flat_map(|row| row.iter().map(|v| v.to_bits()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct HistKey {
    x: Option<Vec<u64>>,
    y: Vec<u8>,
}

/// Relative frequencies of fixed-length choice histories, optionally keyed by
/// the covariate history. Frequencies sum to 1 within each covariate key.
#[derive(Debug, Clone)]
pub struct HistoryDistribution {
    window_length: usize,
    count: usize,
    entries: BTreeMap<HistKey, f64>,
    x_display: BTreeMap<Vec<u64>, Vec<Vec<f64>>>,
}

impl HistoryDistribution {
    /// Window length T.
    pub fn window_length(&self) -> usize {
        self.window_length
    }

    /// Number of windows that produced the frequencies.
    pub fn count(&self) -> usize {
        self.count
    }

    /// True when entries are keyed by covariate history.
    pub fn is_conditional(&self) -> bool {
        self.entries.keys().any(|k| k.x.is_some())
    }

    /// Frequency of an unconditional history (0 when absent).
    pub fn prob(&self, y: &[u8]) -> f64 {
        self.entries
            .get(&HistKey {
                x: None,
                y: y.to_vec(),
            })
            .copied()
            .unwrap_or(0.0)
    }

    /// Iterate entries in deterministic order as (x-history, history, freq).
    pub fn entries(&self) -> impl Iterator<Item = (Option<&[Vec<f64>]>, &[u8], f64)> {
        self.entries.iter().map(|(k, &f)| {
            let x = k
                .x
                .as_ref()
                .map(|bits| self.x_display[bits].as_slice());
            (x, k.y.as_slice(), f)
        })
    }

    /// The distinct covariate histories, in deterministic order.
    pub fn x_keys(&self) -> Vec<&[Vec<f64>]> {
        self.x_display.values().map(Vec::as_slice).collect()
    }

    /// The conditional distribution for one covariate history (entries with
    /// that exact key, already normalized within the key).
    pub fn conditional_slice(&self, x: &[Vec<f64>]) -> Vec<(&[u8], f64)> {
        let bits = Some(x_bits(x));
        self.entries
            .iter()
            .filter(|(k, _)| k.x == bits)
            .map(|(k, &f)| (k.y.as_slice(), f))
            .collect()
    }

    /// Build a distribution directly from (history, optional x-history,
    /// frequency) triples — the entry point for analytically computed
    /// population distributions. Frequencies must be nonnegative and sum to 1
    /// within each covariate key (tolerance 1e-8).
    pub fn from_parts(
        window_length: usize,
        parts: impl IntoIterator<Item = (Vec<u8>, Option<Vec<Vec<f64>>>, f64)>,
        count: usize,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut x_display = BTreeMap::new();
        for (y, x, f) in parts {
            if y.len() != window_length {
                return Err(Error::invalid(format!(
                    "history length {} != window length {}",
                    y.len(),
                    window_length
                )));
            }
            if !(f >= 0.0) {
                return Err(Error::invalid(format!("negative frequency {f}")));
            }
            let bits = x.as_ref().map(|x| x_bits(x));
            if let (Some(bits), Some(x)) = (&bits, x) {
                x_display.entry(bits.clone()).or_insert(x);
            }
            let key = HistKey { x: bits, y };
            if entries.insert(key, f).is_some() {
                return Err(Error::invalid("duplicate history entry".into()));
            }
        }
        let dist = HistoryDistribution {
            window_length,
            count,
            entries,
            x_display,
        };
        dist.validate_sums()?;
        Ok(dist)
    }

    fn validate_sums(&self) -> Result<()> {
        let mut sums: BTreeMap<Option<&Vec<u64>>, f64> = BTreeMap::new();
        for (k, f) in &self.entries {
            *sums.entry(k.x.as_ref()).or_insert(0.0) += f;
        }
        for (_, s) in sums {
            if (s - 1.0).abs() > 1e-8 {
                return Err(Error::invalid(format!(
                    "frequencies sum to {s}, expected 1 within each covariate key"
                )));
            }
        }
        Ok(())
    }

    /// Marginalize an unconditional distribution to a shorter window by
    /// summing over the dropped trailing periods.
    pub fn marginalize_to(&self, t: usize) -> Result<HistoryDistribution> {
        if self.is_conditional() {
            return Err(Error::invalid(
                "cannot marginalize a covariate-conditional distribution".into(),
            ));
        }
        if t < 2 || t > self.window_length {
            return Err(Error::invalid(format!(
                "target window {} outside 2..={}",
                t, self.window_length
            )));
        }
        let mut acc: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (k, &f) in &self.entries {
            *acc.entry(k.y[..t].to_vec()).or_insert(0.0) += f;
        }
        HistoryDistribution::from_parts(
            t,
            acc.into_iter().map(|(y, f)| (y, None, f)),
            self.count,
        )
    }
}

impl Serialize for HistoryDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Entry<'a> {
            y: &'a [u8],
            x_key: Option<&'a [Vec<f64>]>,
            freq: f64,
        }
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("T", &self.window_length)?;
        struct Entries<'a>(&'a HistoryDistribution);
        impl Serialize for Entries<'_> {
            fn serialize<S: Serializer>(
                &self,
                serializer: S,
            ) -> std::result::Result<S::Ok, S::Error> {
                let mut seq = serializer.serialize_seq(Some(self.0.entries.len()))?;
                for (x, y, freq) in self.0.entries() {
                    seq.serialize_element(&Entry { y, x_key: x, freq })?;
                }
                seq.end()
            }
        }
        map.serialize_entry("entries", &Entries(self))?;
        map.serialize_entry("count", &self.count)?;
        map.end()
    }
}

/// Relative frequencies of the first `t` periods of each history, optionally
/// conditioned on the covariate history. Apply [`split_subhistories`] first
/// to pool all contiguous windows.
pub fn history_frequencies(
    panel: &Panel,
    t: usize,
    condition_on_x: bool,
) -> Result<HistoryDistribution> {
    if panel.is_empty() {
        return Err(Error::data("empty panel".into()));
    }
    if t < 2 {
        return Err(Error::invalid(format!("window length must be ≥ 2, got {t}")));
    }
    if condition_on_x && panel.num_covariates().is_none() {
        return Err(Error::invalid(
            "condition_on_x requires covariates in the panel".into(),
        ));
    }
    let mut counts: BTreeMap<HistKey, usize> = BTreeMap::new();
    let mut key_totals: BTreeMap<Option<Vec<u64>>, usize> = BTreeMap::new();
    let mut x_display: BTreeMap<Vec<u64>, Vec<Vec<f64>>> = BTreeMap::new();
    let mut total = 0usize;
    for ind in panel.individuals() {
        if ind.len() < t {
            continue;
        }
        let x_win = if condition_on_x {
            ind.x.as_ref().map(|x| x[..t].to_vec())
        } else {
            None
        };
        let bits = x_win.as_ref().map(|x| x_bits(x));
        if let (Some(bits), Some(x)) = (&bits, x_win) {
            x_display.entry(bits.clone()).or_insert(x);
        }
        *counts
            .entry(HistKey {
                x: bits.clone(),
                y: ind.y[..t].to_vec(),
            })
            .or_insert(0) += 1;
        *key_totals.entry(bits).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::data(format!(
            "no individual has at least {t} periods"
        )));
    }
    let entries = counts
        .into_iter()
        .map(|(k, c)| {
            let denom = key_totals[&k.x] as f64;
            (k, c as f64 / denom)
        })
        .collect();
    Ok(HistoryDistribution {
        window_length: t,
        count: total,
        entries,
        x_display,
    })
}

/// Pooled empirical transition matrix, marginal shares, and persistence.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionSummary {
    /// Row-stochastic matrix: `matrix[k][j]` = P̂(y_t = j | y_{t−1} = k).
    /// Rows with no observed transitions hold NaN (serialized as null).
    pub matrix: Vec<Vec<f64>>,
    /// Marginal shares P̂_j over all pooled observations.
    pub shares: Vec<f64>,
    /// Persistence per alternative: P̂_{j|j} − P̂_j.
    pub persistence: Vec<f64>,
    /// Row states with no observed transitions.
    pub undefined_rows: Vec<usize>,
}

/// Transition matrix from pooled consecutive pairs, shares from pooled
/// observations, and persistence per alternative.
pub fn empirical_transition_matrix(panel: &Panel) -> Result<TransitionSummary> {
    if panel.is_empty() {
        return Err(Error::data("empty panel".into()));
    }
    let m = panel.num_alternatives();
    let mut pair_counts = vec![vec![0usize; m]; m];
    let mut obs_counts = vec![0usize; m];
    let mut total_obs = 0usize;
    for ind in panel.individuals() {
        for &c in &ind.y {
            obs_counts[usize::from(c)] += 1;
            total_obs += 1;
        }
        for w in ind.y.windows(2) {
            pair_counts[usize::from(w[0])][usize::from(w[1])] += 1;
        }
    }
    let shares: Vec<f64> = obs_counts
        .iter()
        .map(|&c| c as f64 / total_obs as f64)
        .collect();
    let mut matrix = vec![vec![f64::NAN; m]; m];
    let mut undefined_rows = Vec::new();
    for k in 0..m {
        let row_total: usize = pair_counts[k].iter().sum();
        if row_total == 0 {
            undefined_rows.push(k);
            continue;
        }
        for j in 0..m {
            matrix[k][j] = pair_counts[k][j] as f64 / row_total as f64;
        }
    }
    let persistence: Vec<f64> = (0..m).map(|j| matrix[j][j] - shares[j]).collect();
    Ok(TransitionSummary {
        matrix,
        shares,
        persistence,
        undefined_rows,
    })
}
