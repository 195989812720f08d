//! Closed-form plug-in estimators of the identified causal parameters:
//! average transition probabilities, one-period / n-period /
//! covariate-integrated / duration-specific average marginal effects,
//! average treatment effects, and the persistence decomposition.
//!
//! Every estimator here is a plug-in: a slope estimate (from
//! [`crate::likelihood`] or user-supplied) enters a closed form together
//! with observed history frequencies. No integration over the
//! heterogeneity distribution is ever performed — the weights are built so
//! the averaging happens automatically. Estimates are deliberately **not**
//! clipped to their logical ranges; out-of-range values get a warning
//! instead, so bootstrap distributions stay unbiased.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, Theta};
use crate::panel::{
    empirical_transition_matrix, history_frequencies, split_subhistories, HistoryDistribution,
    Panel,
};

/// Which causal parameter an [`AmeEstimate`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmeKind {
    /// Average own-transition probability Π_jj.
    PiJj,
    /// One-period average marginal effect of the lagged state.
    Ame1,
    /// One-period AME within a constant-covariate subpopulation.
    Ame1XConst,
    /// n-period-forward average marginal effect.
    AmeN,
    /// Covariate-integrated one-period AME at a calendar period.
    AmeXt,
    /// Duration AME: entering a spell versus staying out.
    AmeDur01,
    /// Duration AME: second spell period versus first.
    AmeDur12,
    /// Duration AME: second spell period versus staying out.
    AmeDur02,
    /// Average treatment effect Π_jj − E[1{y_t = j}].
    AteJj,
    /// Log odds ratio ln(Π_jj / Π_00).
    LogOddsJj,
}

impl AmeKind {
    /// Stable serialization token.
    pub fn token(self) -> &'static str {
        match self {
            AmeKind::PiJj => "PI_JJ",
            AmeKind::Ame1 => "AME1",
            AmeKind::Ame1XConst => "AME1_X_CONST",
            AmeKind::AmeN => "AME_N",
            AmeKind::AmeXt => "AME_XT",
            AmeKind::AmeDur01 => "AME_DUR_01",
            AmeKind::AmeDur12 => "AME_DUR_12",
            AmeKind::AmeDur02 => "AME_DUR_02",
            AmeKind::AteJj => "ATE_JJ",
            AmeKind::LogOddsJj => "LOG_ODDS_JJ",
        }
    }

    /// Parse a serialization token.
    pub fn from_token(token: &str) -> Result<Self> {
        Ok(match token {
            "PI_JJ" => AmeKind::PiJj,
            "AME1" => AmeKind::Ame1,
            "AME1_X_CONST" => AmeKind::Ame1XConst,
            "AME_N" => AmeKind::AmeN,
            "AME_XT" => AmeKind::AmeXt,
            "AME_DUR_01" => AmeKind::AmeDur01,
            "AME_DUR_12" => AmeKind::AmeDur12,
            "AME_DUR_02" => AmeKind::AmeDur02,
            "ATE_JJ" => AmeKind::AteJj,
            "LOG_ODDS_JJ" => AmeKind::LogOddsJj,
            other => return Err(Error::invalid(format!("unknown estimate kind '{other}'"))),
        })
    }
}

impl Serialize for AmeKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for AmeKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let token = String::deserialize(d)?;
        AmeKind::from_token(&token).map_err(serde::de::Error::custom)
    }
}

/// A scalar causal-parameter estimate with its metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmeEstimate {
    /// Which parameter this is.
    pub kind: AmeKind,
    /// The point estimate.
    pub value: f64,
    /// Standard error when one has been attached (e.g. by the bootstrap).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub se: Option<f64>,
    /// Alternative j for Π_jj / ATE_jj / log-odds kinds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alternative: Option<u8>,
    /// Horizon n for the n-period effect.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub horizon: Option<usize>,
    /// Calendar period t for period-specific kinds.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub period: Option<usize>,
    /// Individuals (or windows) entering the average.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_used: Option<f64>,
    /// Individuals dropped for not reaching the required period.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_dropped: Option<usize>,
    /// Non-fatal diagnostics (out-of-range values, assumed durations, …).
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl AmeEstimate {
    fn new(kind: AmeKind, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::computation(format!(
                "{} estimate is not finite",
                kind.token()
            )));
        }
        Ok(AmeEstimate {
            kind,
            value,
            se: None,
            alternative: None,
            horizon: None,
            period: None,
            n_used: None,
            n_dropped: None,
            warnings: Vec::new(),
        })
    }

    /// Attach a standard error.
    pub fn with_se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }

    fn flag_range(mut self, lo: f64, hi: f64) -> Self {
        if self.value < lo || self.value > hi {
            self.warnings.push(format!(
                "{} estimate {:.6} lies outside [{lo}, {hi}]; plug-in closed \
                 forms are reported unclipped",
                self.kind.token(),
                self.value
            ));
        }
        self
    }
}

fn require_window(dist: &HistoryDistribution, t: usize, what: &str) -> Result<()> {
    if dist.window_length() != t {
        return Err(Error::invalid(format!(
            "{what} needs {t}-period frequencies, got window length {}",
            dist.window_length()
        )));
    }
    Ok(())
}

fn require_unconditional(dist: &HistoryDistribution, what: &str) -> Result<()> {
    if dist.is_conditional() {
        return Err(Error::invalid(format!(
            "{what} needs unconditional frequencies; marginalize or drop the \
             covariate conditioning first"
        )));
    }
    Ok(())
}

/// Build the (J+1)×(J+1) habit matrix of the diagonal-habit model:
/// `β_kj = β_jj·1{k=j}` with alternative 0 normalized to zero.
pub fn diagonal_habit_matrix(state_betas: &[f64]) -> Vec<Vec<f64>> {
    let m = state_betas.len() + 1;
    let mut out = vec![vec![0.0; m]; m];
    for (j, &b) in state_betas.iter().enumerate() {
        out[j + 1][j + 1] = b;
    }
    out
}

/// Average own-transition probability Π̂_jj from 2- and 3-period history
/// frequencies and a habit matrix `beta[k][j]` (row = previous choice,
/// column = current choice; any per-row normalization is immaterial):
///
/// ```text
/// Π̂_jj = P̂_{j,j} + Σ_{k≠j} [ P̂_{k,j,j}
///        + Σ_{ℓ≠j} exp{β_kℓ − β_kj + β_jj − β_jℓ} · P̂_{k,j,ℓ} ]
/// ```
pub fn avg_transition_jj(
    freq2: &HistoryDistribution,
    freq3: &HistoryDistribution,
    beta: &[Vec<f64>],
    j: u8,
) -> Result<AmeEstimate> {
    require_window(freq2, 2, "the own-transition term")?;
    require_window(freq3, 3, "the correction terms")?;
    require_unconditional(freq2, "avg_transition_jj")?;
    require_unconditional(freq3, "avg_transition_jj")?;
    let m = beta.len();
    if m < 2 || beta.iter().any(|row| row.len() != m) {
        return Err(Error::invalid(
            "habit matrix must be square with at least 2 alternatives".into(),
        ));
    }
    if beta.iter().flatten().any(|b| !b.is_finite()) {
        return Err(Error::invalid("habit matrix entries must be finite".into()));
    }
    let ju = usize::from(j);
    if ju >= m {
        return Err(Error::invalid(format!("alternative {j} out of range")));
    }
    let mut total = freq2.prob(&[j, j]);
    for k in 0..m {
        if k == ju {
            continue;
        }
        total += freq3.prob(&[k as u8, j, j]);
        for l in 0..m {
            if l == ju {
                continue;
            }
            let factor = (beta[k][l] - beta[k][ju] + beta[ju][ju] - beta[ju][l]).exp();
            total += factor * freq3.prob(&[k as u8, j, l as u8]);
        }
    }
    let mut est = AmeEstimate::new(AmeKind::PiJj, total)?.flag_range(0.0, 1.0);
    est.alternative = Some(j);
    est.n_used = Some(freq3.count() as f64);
    Ok(est)
}

/// One-period average marginal effect in the binary lag model:
/// `(e^β − 1)(P̂_{0,1,0} + P̂_{1,0,1})` from 3-period frequencies.
pub fn ame1_binary(freq3: &HistoryDistribution, beta: f64) -> Result<AmeEstimate> {
    require_window(freq3, 3, "the one-period effect")?;
    require_unconditional(freq3, "ame1_binary")?;
    if !beta.is_finite() {
        return Err(Error::invalid("slope must be finite".into()));
    }
    let value = (beta.exp() - 1.0) * (freq3.prob(&[0, 1, 0]) + freq3.prob(&[1, 0, 1]));
    let mut est = AmeEstimate::new(AmeKind::Ame1, value)?.flag_range(-1.0, 1.0);
    est.n_used = Some(freq3.count() as f64);
    Ok(est)
}

/// Constant-covariate one-period effects: one estimate per covariate
/// history in a conditional 3-period distribution.
pub fn ame1_by_covariate(
    freq3: &HistoryDistribution,
    beta: f64,
) -> Result<Vec<(Vec<Vec<f64>>, AmeEstimate)>> {
    require_window(freq3, 3, "the one-period effect")?;
    if !freq3.is_conditional() {
        return Err(Error::invalid(
            "per-covariate effects need a covariate-conditional distribution".into(),
        ));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("slope must be finite".into()));
    }
    let scale = beta.exp() - 1.0;
    let mut out = Vec::new();
    for x in freq3.x_keys() {
        let slice = freq3.conditional_slice(x);
        let mass: f64 = slice
            .iter()
            .filter(|(y, _)| *y == [0, 1, 0] || *y == [1, 0, 1])
            .map(|(_, p)| p)
            .sum();
        let est = AmeEstimate::new(AmeKind::Ame1XConst, scale * mass)?.flag_range(-1.0, 1.0);
        out.push((x.to_vec(), est));
    }
    Ok(out)
}

/// n-period-forward average marginal effect:
/// `(e^β − 1)^n · [P̂_{0,(1,0)^n} + P̂_{(1,0)^n,1}]` from (2n+1)-period
/// frequencies, where `(1,0)^n` is the alternating block.
pub fn ame_n(freq: &HistoryDistribution, beta: f64, n: usize) -> Result<AmeEstimate> {
    if n < 1 {
        return Err(Error::invalid("horizon must be at least 1".into()));
    }
    require_window(freq, 2 * n + 1, "the n-period effect")?;
    require_unconditional(freq, "ame_n")?;
    if !beta.is_finite() {
        return Err(Error::invalid("slope must be finite".into()));
    }
    let mut lead_zero = vec![0u8];
    let mut trail_one = Vec::new();
    for _ in 0..n {
        lead_zero.extend_from_slice(&[1, 0]);
        trail_one.extend_from_slice(&[1, 0]);
    }
    trail_one.push(1);
    let value = (beta.exp() - 1.0).powi(n as i32) * (freq.prob(&lead_zero) + freq.prob(&trail_one));
    let mut est = AmeEstimate::new(AmeKind::AmeN, value)?.flag_range(-1.0, 1.0);
    est.horizon = Some(n);
    est.n_used = Some(freq.count() as f64);
    Ok(est)
}

/// Covariate-integrated one-period effect at calendar period `t` (1-based,
/// `t ≥ 3`): the average over individuals of a weight evaluated at their own
/// realized `(y_{t−2}, y_{t−1}, y_t)` and covariates `(x_{t−1}, x_t)`.
///
/// With `u_2 = x_{t−1}'γ` and `u_3 = x_t'γ`, the non-zero weights are
///
/// ```text
///   (0,0,1): e^{u_2 − u_3} − 1          (0,1,0): e^{β + u_3 − u_2} − 1
///   (1,0,1): e^{β + u_2 − u_3} − 1      (1,1,0): e^{u_3 − u_2} − 1
/// ```
///
/// and constant histories get weight zero. Individuals not observed through
/// period `t` are dropped (counted in `n_dropped`).
pub fn ame_xt(panel: &Panel, theta: &Theta, t: usize) -> Result<AmeEstimate> {
    if t < 3 {
        return Err(Error::invalid(
            "the covariate-integrated effect needs a period index ≥ 3".into(),
        ));
    }
    if panel.num_alternatives() != 2 {
        return Err(Error::invalid(
            "the covariate-integrated effect applies to binary panels".into(),
        ));
    }
    let k = panel
        .num_covariates()
        .ok_or_else(|| Error::data("panel has no covariate columns".into()))?;
    let spec = ModelSpec::binary_lag_exog(k);
    theta.validate_for(&spec)?;

    let mut windows = Vec::new();
    let mut dropped = 0usize;
    for ind in panel.individuals() {
        if ind.len() < t {
            dropped += 1;
            continue;
        }
        let x = ind.x.as_ref().expect("panel reported covariates");
        windows.push((x[t - 3..t].to_vec(), ind.y[t - 3..t].to_vec(), 1.0));
    }
    if windows.is_empty() {
        return Err(Error::data(format!(
            "no individual is observed through period {t}"
        )));
    }
    let share = 1.0 / windows.len() as f64;
    let used = windows.len();
    for w in &mut windows {
        w.2 = share;
    }
    let mut est = ame_xt_weighted(windows, theta)?;
    est.period = Some(t);
    est.n_used = Some(used as f64);
    est.n_dropped = Some(dropped);
    Ok(est)
}

/// The plug-in form behind [`ame_xt`]: a weighted sum of the pattern weights
/// over `(x-window, 3-period history, weight)` triples, for weights that are
/// nonnegative and sum to 1 (tolerance 1e-8). The x-window rows are the
/// covariates of the three window periods; only the second and third rows
/// enter. This is the entry point for analytically computed population
/// distributions, where the weight of a triple is its joint probability.
pub fn ame_xt_weighted<I>(windows: I, theta: &Theta) -> Result<AmeEstimate>
where
    I: IntoIterator<Item = (Vec<Vec<f64>>, Vec<u8>, f64)>,
{
    let beta = *theta
        .state
        .first()
        .ok_or_else(|| Error::invalid("parameters carry no state coefficient".to_string()))?;
    let gamma = &theta.exog;
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut count = 0usize;
    for (x, y, weight) in windows {
        if y.len() != 3 || x.len() != 3 {
            return Err(Error::invalid(format!(
                "each window must hold 3 periods of choices and covariates, \
                 got {} and {}",
                y.len(),
                x.len()
            )));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::invalid(
                "the covariate-integrated effect applies to binary histories".to_string(),
            ));
        }
        if x.iter().any(|row| row.len() != gamma.len()) {
            return Err(Error::invalid(format!(
                "covariate rows must match the {} exogenous coefficients",
                gamma.len()
            )));
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("invalid window weight {weight}")));
        }
        let dot = |xs: &[f64]| xs.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>();
        let u2 = dot(&x[1]);
        let u3 = dot(&x[2]);
        total += weight
            * match (y[0], y[1], y[2]) {
                (0, 0, 1) => (u2 - u3).exp() - 1.0,
                (0, 1, 0) => (beta + u3 - u2).exp() - 1.0,
                (1, 0, 1) => (beta + u2 - u3).exp() - 1.0,
                (1, 1, 0) => (u3 - u2).exp() - 1.0,
                _ => 0.0,
            };
        mass += weight;
        count += 1;
    }
    if count == 0 {
        return Err(Error::data("no windows supplied".to_string()));
    }
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!(
            "window weights sum to {mass}, expected 1"
        )));
    }
    let mut est = AmeEstimate::new(AmeKind::AmeXt, total)?.flag_range(-1.0, 1.0);
    est.n_used = Some(count as f64);
    Ok(est)
}

/// Which duration margin a duration effect measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DurationMargin {
    /// First spell period versus staying out (0 → 1).
    ZeroToOne,
    /// Second spell period versus first (1 → 2).
    OneToTwo,
    /// Second spell period versus staying out (0 → 2).
    ZeroToTwo,
}

impl DurationMargin {
    /// CLI/file identifier.
    pub fn id(self) -> &'static str {
        match self {
            DurationMargin::ZeroToOne => "0-to-1",
            DurationMargin::OneToTwo => "1-to-2",
            DurationMargin::ZeroToTwo => "0-to-2",
        }
    }

    /// Parse a CLI/file identifier.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "0-to-1" | "0-1" => Ok(DurationMargin::ZeroToOne),
            "1-to-2" | "1-2" => Ok(DurationMargin::OneToTwo),
            "0-to-2" | "0-2" => Ok(DurationMargin::ZeroToTwo),
            other => Err(Error::invalid(format!(
                "unknown duration margin '{other}' (expected 0-to-1, 1-to-2, or 0-to-2)"
            ))),
        }
    }

    fn kind(self) -> AmeKind {
        match self {
            DurationMargin::ZeroToOne => AmeKind::AmeDur01,
            DurationMargin::OneToTwo => AmeKind::AmeDur12,
            DurationMargin::ZeroToTwo => AmeKind::AmeDur02,
        }
    }
}

/// Duration-specific average marginal effects from 4-period frequencies of
/// windows starting at a spell boundary (initial duration 0), for the
/// duration model with cap 2. `beta1`/`beta2` are the spell coefficients.
pub fn ame_duration(
    freq4: &HistoryDistribution,
    beta1: f64,
    beta2: f64,
    margin: DurationMargin,
) -> Result<AmeEstimate> {
    require_window(freq4, 4, "duration effects")?;
    require_unconditional(freq4, "ame_duration")?;
    if !(beta1.is_finite() && beta2.is_finite()) {
        return Err(Error::invalid("spell coefficients must be finite".into()));
    }
    let b1 = beta1.exp();
    let b2 = beta2.exp();
    let p = |y: &[u8]| freq4.prob(y);
    let switchers = p(&[0, 0, 1, 0]) + p(&[0, 1, 0, 0]);
    let entry_pair = p(&[1, 0, 1, 0]) + p(&[1, 0, 1, 1]);
    let value = match margin {
        DurationMargin::ZeroToOne => {
            (b1 - 1.0) / 2.0 * switchers
                + (b1 - 1.0) / b1 * p(&[0, 0, 1, 1])
                + (b1 - 1.0) * entry_pair
        }
        DurationMargin::OneToTwo => {
            (b2 - b1) / 2.0 * switchers
                + (b2 - b1) / b1 * p(&[0, 0, 1, 1])
                + (b2 * (1.0 - b2) / b1 + b2 - 1.0) * p(&[0, 1, 1, 0])
                + (1.0 - b1 / b2) * entry_pair
                + ((b2 - 1.0) / b1 - 1.0 + 1.0 / b2) * p(&[1, 1, 0, 0])
        }
        DurationMargin::ZeroToTwo => {
            (b2 - 1.0) / 2.0 * switchers
                + (b2 - 1.0) / b1 * p(&[0, 0, 1, 1])
                + (b2 * (1.0 - b2) / b1 + b2 - 1.0) * p(&[0, 1, 1, 0])
                + (b1 - b1 / b2) * entry_pair
                + ((b2 - 1.0) / b1 - 1.0 + 1.0 / b2) * p(&[1, 1, 0, 0])
        }
    };
    let mut est = AmeEstimate::new(margin.kind(), value)?.flag_range(-1.0, 1.0);
    est.n_used = Some(freq4.count() as f64);
    Ok(est)
}

/// Average treatment effect at period `t` (1-based): the supplied Π̂_jj
/// minus the cross-sectional mean of `1{y_t = j}` over individuals observed
/// through `t`.
pub fn ate_jj(pi_jj: &AmeEstimate, panel: &Panel, t: usize) -> Result<AmeEstimate> {
    if pi_jj.kind != AmeKind::PiJj {
        return Err(Error::invalid(format!(
            "expected a PI_JJ estimate, got {}",
            pi_jj.kind.token()
        )));
    }
    let j = pi_jj
        .alternative
        .ok_or_else(|| Error::invalid("PI_JJ estimate is missing its alternative".into()))?;
    if t < 1 {
        return Err(Error::invalid("period index is 1-based".into()));
    }
    let mut hits = 0usize;
    let mut used = 0usize;
    for ind in panel.individuals() {
        if ind.len() < t {
            continue;
        }
        used += 1;
        if ind.y[t - 1] == j {
            hits += 1;
        }
    }
    if used == 0 {
        return Err(Error::data(format!(
            "no individual is observed through period {t}"
        )));
    }
    let share = hits as f64 / used as f64;
    let mut est =
        AmeEstimate::new(AmeKind::AteJj, pi_jj.value - share)?.flag_range(-1.0, 1.0);
    est.alternative = Some(j);
    est.period = Some(t);
    est.n_used = Some(used as f64);
    est.warnings.extend(pi_jj.warnings.iter().cloned());
    Ok(est)
}

/// One alternative's row of the persistence decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionRow {
    /// The alternative j.
    pub alternative: u8,
    /// Raw persistence `P̂_{j|j} − P̂_j`.
    pub persistence: f64,
    /// Average own-transition probability Π̂_jj.
    pub avg_transition: f64,
    /// Treatment effect `Π̂_jj − P̂_j` (true state dependence).
    pub treatment_effect: f64,
    /// Heterogeneity share `persistence − treatment_effect`.
    pub heterogeneity: f64,
    /// Pooled share `P̂_j`.
    pub share: f64,
}

/// The persistence decomposition across all alternatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionTable {
    /// One row per alternative, ordered by alternative.
    pub rows: Vec<DecompositionRow>,
    /// Non-fatal diagnostics.
    pub warnings: Vec<String>,
}

/// Split observed persistence into true state dependence and heterogeneity,
/// per alternative: `Pers = P̂_{j|j} − P̂_j`, `ATP = Π̂_jj`,
/// `ATE = Π̂_jj − P̂_j`, `UHet = Pers − ATE`. Works for the binary lag model
/// and the diagonal-habit model (θ supplies the habit diagonal).
pub fn persistence_decomposition(
    panel: &Panel,
    theta: &Theta,
    spec: &ModelSpec,
) -> Result<DecompositionTable> {
    match spec.kind {
        ModelKind::BinaryLag | ModelKind::MultinomialHabit => {}
        _ => {
            return Err(Error::invalid(
                "the decomposition applies to the lag and diagonal-habit models".into(),
            ));
        }
    }
    theta.validate_for(spec)?;
    if panel.num_alternatives() > spec.num_alternatives {
        return Err(Error::data(format!(
            "panel has {} alternatives but the model allows {}",
            panel.num_alternatives(),
            spec.num_alternatives
        )));
    }
    let windows3 = split_subhistories(panel, 3)?;
    let freq3 = history_frequencies(&windows3, 3, false)?;
    let freq2 = freq3.marginalize_to(2)?;
    let habit = diagonal_habit_matrix(&theta.state);

    let transitions = empirical_transition_matrix(panel)?;
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    for j in 0..spec.num_alternatives {
        let pi = avg_transition_jj(&freq2, &freq3, &habit, j as u8)?;
        warnings.extend(pi.warnings.iter().cloned());
        let share = transitions.shares[j];
        let p_stay = transitions.matrix[j][j];
        if p_stay.is_nan() {
            warnings.push(format!(
                "alternative {j} never occurs as a previous choice; its \
                 persistence entries are undefined"
            ));
        }
        let treatment_effect = pi.value - share;
        rows.push(DecompositionRow {
            alternative: j as u8,
            persistence: p_stay - share,
            avg_transition: pi.value,
            treatment_effect,
            heterogeneity: (p_stay - share) - treatment_effect,
            share,
        });
    }
    Ok(DecompositionTable { rows, warnings })
}

/// Log odds ratio `ln(Π̂_jj / Π̂_00)` of two average transition
/// probabilities. Errors on nonpositive inputs.
pub fn log_odds_ratio(pi_jj: f64, pi_00: f64) -> Result<f64> {
    if !(pi_jj > 0.0 && pi_00 > 0.0) || !pi_jj.is_finite() || !pi_00.is_finite() {
        return Err(Error::invalid(format!(
            "log odds ratio needs positive transition probabilities, got \
             {pi_jj} and {pi_00}"
        )));
    }
    Ok((pi_jj / pi_00).ln())
}

/// Percentage-change effect `(Π̂_jj − baseline) / baseline`, e.g. with the
/// counterfactual `Π̂_01 = 1 − Π̂_00` as the baseline in the binary model.
pub fn percentage_change(pi_jj: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) || !pi_jj.is_finite() || !baseline.is_finite() {
        return Err(Error::invalid(format!(
            "percentage change needs a positive baseline, got {baseline}"
        )));
    }
    Ok((pi_jj - baseline) / baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Individual;
    use approx::assert_relative_eq;

    fn dist3(entries: &[([u8; 3], f64)]) -> HistoryDistribution {
        HistoryDistribution::from_parts(
            3,
            entries
                .iter()
                .map(|(y, p)| (y.to_vec(), None, *p)),
            1,
        )
        .unwrap()
    }

    /// An arbitrary fully-supported 3-period distribution.
    fn full_dist3() -> HistoryDistribution {
        let raw = [
            ([0, 0, 0], 0.11),
            ([0, 0, 1], 0.07),
            ([0, 1, 0], 0.13),
            ([0, 1, 1], 0.09),
            ([1, 0, 0], 0.08),
            ([1, 0, 1], 0.17),
            ([1, 1, 0], 0.05),
            ([1, 1, 1], 0.30),
        ];
        dist3(&raw)
    }

    #[test]
    fn ame1_closed_form() {
        let freq = dist3(&[([0, 1, 0], 0.25), ([1, 0, 1], 0.15), ([0, 0, 0], 0.60)]);
        let est = ame1_binary(&freq, 1.0).unwrap();
        assert_relative_eq!(
            est.value,
            (1f64.exp() - 1.0) * 0.40,
            epsilon = 1e-14
        );
        assert_eq!(ame1_binary(&freq, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn pi_identity_gives_ame1() {
        let beta = 0.8;
        let freq3 = full_dist3();
        let freq2 = freq3.marginalize_to(2).unwrap();
        let habit = diagonal_habit_matrix(&[beta]);
        let pi11 = avg_transition_jj(&freq2, &freq3, &habit, 1).unwrap();
        let pi00 = avg_transition_jj(&freq2, &freq3, &habit, 0).unwrap();
        let ame = ame1_binary(&freq3, beta).unwrap();
        assert_relative_eq!(
            pi11.value + pi00.value - 1.0,
            ame.value,
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_habit_reduces_pi_to_marginal() {
        let freq3 = full_dist3();
        let freq2 = freq3.marginalize_to(2).unwrap();
        let habit = diagonal_habit_matrix(&[0.0]);
        let pi = avg_transition_jj(&freq2, &freq3, &habit, 1).unwrap();
        // With β = 0, Π̂_11 collapses to the period-2 marginal of 1.
        let marginal: f64 = [[0u8, 1], [1, 1]]
            .iter()
            .map(|w| freq2.prob(w))
            .sum();
        assert_relative_eq!(pi.value, marginal, epsilon = 1e-12);
    }

    #[test]
    fn habit_matrix_row_shifts_are_immaterial() {
        let freq3 = full_dist3();
        let freq2 = freq3.marginalize_to(2).unwrap();
        let base = diagonal_habit_matrix(&[0.7]);
        let mut shifted = base.clone();
        for (k, row) in shifted.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v += 0.3 * (k as f64 + 1.0);
            }
        }
        let a = avg_transition_jj(&freq2, &freq3, &base, 1).unwrap();
        let b = avg_transition_jj(&freq2, &freq3, &shifted, 1).unwrap();
        assert_relative_eq!(a.value, b.value, epsilon = 1e-12);
    }

    #[test]
    fn ame_n_horizon_one_matches_ame1() {
        let freq3 = full_dist3();
        let a = ame_n(&freq3, 0.9, 1).unwrap();
        let b = ame1_binary(&freq3, 0.9).unwrap();
        assert_relative_eq!(a.value, b.value, epsilon = 1e-14);
        assert_eq!(a.horizon, Some(1));
    }

    #[test]
    fn ame_n_window_check() {
        let freq3 = full_dist3();
        assert!(ame_n(&freq3, 0.9, 2).is_err());
    }

    fn xt_panel(xs: &[(Vec<u8>, Vec<f64>)]) -> Panel {
        let individuals = xs
            .iter()
            .enumerate()
            .map(|(i, (y, xrow))| Individual {
                id: format!("i{i}"),
                y: y.clone(),
                x: Some(xrow.iter().map(|&v| vec![v]).collect()),
                d1: None,
            })
            .collect();
        Panel::new(individuals, 2).unwrap()
    }

    #[test]
    fn ame_xt_constant_x_reduces_to_ame1() {
        let beta = 1.0;
        let histories: Vec<Vec<u8>> = vec![
            vec![0, 1, 0],
            vec![1, 0, 1],
            vec![1, 0, 1],
            vec![0, 0, 0],
            vec![1, 1, 1],
        ];
        let panel = xt_panel(
            &histories
                .iter()
                .map(|y| (y.clone(), vec![2.0; 3]))
                .collect::<Vec<_>>(),
        );
        let theta = Theta::binary_exog(beta, vec![0.4]);
        let est = ame_xt(&panel, &theta, 3).unwrap();
        // Empirical frequencies: P(010) = 1/5, P(101) = 2/5.
        assert_relative_eq!(
            est.value,
            (beta.exp() - 1.0) * (0.2 + 0.4),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ame_xt_zero_gamma_ignores_x_variation() {
        let beta = 0.6;
        let data = vec![
            (vec![0, 1, 0], vec![1.0, 5.0, -2.0]),
            (vec![1, 0, 1], vec![0.0, 3.0, 7.0]),
            (vec![0, 0, 1], vec![2.0, -1.0, 4.0]),
            (vec![1, 1, 0], vec![1.0, 1.5, 0.5]),
        ];
        let panel = xt_panel(&data);
        let theta = Theta::binary_exog(beta, vec![0.0]);
        let est = ame_xt(&panel, &theta, 3).unwrap();
        let expect = ((beta.exp() - 1.0) + (beta.exp() - 1.0) + 0.0 + 0.0) / 4.0;
        assert_relative_eq!(est.value, expect, epsilon = 1e-12);
    }

    #[test]
    fn ame_xt_drops_short_individuals() {
        let mut data = vec![
            (vec![0u8, 1, 0, 1], vec![1.0, 1.0, 1.0, 1.0]),
            (vec![1, 0, 1, 0], vec![1.0, 1.0, 1.0, 1.0]),
        ];
        data.push((vec![0, 1], vec![1.0, 1.0]));
        let individuals: Vec<Individual> = data
            .iter()
            .enumerate()
            .map(|(i, (y, xrow))| Individual {
                id: format!("i{i}"),
                y: y.clone(),
                x: Some(xrow.iter().map(|&v| vec![v]).collect()),
                d1: None,
            })
            .collect();
        let panel = Panel::new(individuals, 2).unwrap();
        let theta = Theta::binary_exog(0.5, vec![0.1]);
        let est = ame_xt(&panel, &theta, 4).unwrap();
        assert_eq!(est.n_used, Some(2.0));
        assert_eq!(est.n_dropped, Some(1));
    }

    fn dist4(entries: &[([u8; 4], f64)]) -> HistoryDistribution {
        HistoryDistribution::from_parts(
            4,
            entries.iter().map(|(y, p)| (y.to_vec(), None, *p)),
            1,
        )
        .unwrap()
    }

    #[test]
    fn duration_margins_are_additive() {
        let freq = dist4(&[
            ([0, 0, 1, 0], 0.10),
            ([0, 1, 0, 0], 0.08),
            ([0, 0, 1, 1], 0.12),
            ([0, 1, 1, 0], 0.07),
            ([1, 0, 1, 0], 0.05),
            ([1, 0, 1, 1], 0.06),
            ([1, 1, 0, 0], 0.09),
            ([0, 0, 0, 0], 0.43),
        ]);
        let (b1, b2) = (0.4, 0.9);
        let a01 = ame_duration(&freq, b1, b2, DurationMargin::ZeroToOne).unwrap();
        let a12 = ame_duration(&freq, b1, b2, DurationMargin::OneToTwo).unwrap();
        let a02 = ame_duration(&freq, b1, b2, DurationMargin::ZeroToTwo).unwrap();
        assert_relative_eq!(a02.value, a01.value + a12.value, epsilon = 1e-12);
    }

    #[test]
    fn equal_spell_coefficients_zero_the_deepening_margin() {
        let freq = dist4(&[
            ([0, 0, 1, 0], 0.2),
            ([0, 0, 1, 1], 0.2),
            ([0, 1, 1, 0], 0.2),
            ([1, 1, 0, 0], 0.2),
            ([1, 0, 1, 1], 0.2),
        ]);
        let a12 = ame_duration(&freq, 0.7, 0.7, DurationMargin::OneToTwo).unwrap();
        assert_relative_eq!(a12.value, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn ate_subtracts_period_share() {
        let individuals = vec![
            Individual {
                id: "a".into(),
                y: vec![0, 1, 1],
                x: None,
                d1: None,
            },
            Individual {
                id: "b".into(),
                y: vec![1, 1, 0],
                x: None,
                d1: None,
            },
            Individual {
                id: "c".into(),
                y: vec![0, 0],
                x: None,
                d1: None,
            },
        ];
        let panel = Panel::new(individuals, 2).unwrap();
        let mut pi = AmeEstimate::new(AmeKind::PiJj, 0.9).unwrap();
        pi.alternative = Some(1);
        // Period 3: only a and b qualify, both share j=1 at t=3? a has 1, b has 0.
        let est = ate_jj(&pi, &panel, 3).unwrap();
        assert_relative_eq!(est.value, 0.9 - 0.5, epsilon = 1e-14);
        assert_eq!(est.n_used, Some(2.0));
    }

    #[test]
    fn decomposition_identity_is_exact() {
        let individuals = vec![
            Individual {
                id: "a".into(),
                y: vec![0, 1, 1, 0],
                x: None,
                d1: None,
            },
            Individual {
                id: "b".into(),
                y: vec![1, 1, 0, 1],
                x: None,
                d1: None,
            },
            Individual {
                id: "c".into(),
                y: vec![0, 0, 1, 1],
                x: None,
                d1: None,
            },
        ];
        let panel = Panel::new(individuals, 2).unwrap();
        let spec = ModelSpec::binary_lag();
        let table =
            persistence_decomposition(&panel, &Theta::binary(0.8), &spec).unwrap();
        assert_eq!(table.rows.len(), 2);
        for row in &table.rows {
            assert_relative_eq!(
                row.persistence,
                row.treatment_effect + row.heterogeneity,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn log_odds_and_percentage_change() {
        assert_relative_eq!(log_odds_ratio(0.5, 0.25).unwrap(), 2f64.ln());
        assert_eq!(log_odds_ratio(0.5, 0.5).unwrap(), 0.0);
        assert!(log_odds_ratio(0.0, 0.5).is_err());
        assert!(log_odds_ratio(0.5, -0.1).is_err());
        assert_relative_eq!(percentage_change(0.6, 0.5).unwrap(), 0.2, epsilon = 1e-14);
        assert!(percentage_change(0.6, 0.0).is_err());
    }

    #[test]
    fn out_of_range_estimates_warn_but_pass_through() {
        let freq = dist3(&[([0, 1, 0], 0.9), ([0, 0, 0], 0.1)]);
        let est = ame1_binary(&freq, 2.0).unwrap();
        assert!(est.value > 1.0);
        assert!(!est.warnings.is_empty());
    }
}
