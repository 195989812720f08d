//! Model variants, transition probabilities, and sufficient statistics.
//!
//! Four logit variants are supported, all with an unrestricted per-individual
//! heterogeneity term:
//!
//! - [`ModelKind::BinaryLag`]: binary choice, utility `α + β·1{y_{t−1}=1}`.
//! - [`ModelKind::BinaryLagExog`]: adds exogenous covariates,
//!   `α + β·1{y_{t−1}=1} + x_t'γ`.
//! - [`ModelKind::BinaryDuration`]: state dependence varies with how long the
//!   current spell of 1s has lasted, `α + β(min(r, d_max))·1{y_{t−1}=1}`
//!   where `r` counts consecutive 1s through period t−1 (pre-sample periods
//!   enter via the panel's initial-duration column).
//! - [`ModelKind::MultinomialHabit`]: J+1 alternatives with habit only on the
//!   diagonal, utility of alternative j is `α(j) + β_jj·1{y_{t−1}=j}` with
//!   alternative 0 fully normalized (`α(0) = β_00 = 0`).
//!
//! For every variant the log-probability of a history splits into a part that
//! depends on the heterogeneity only through observable counts (the
//! [`AlphaSignature`]) and a linear term in the slope parameters (the
//! [`theta_statistics`]). Histories sharing a signature form the equivalence
//! classes over which the conditional likelihood is built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_logistic, logistic, softmax};
use crate::panel::x_bits;

/// The supported model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Binary choice with first-order state dependence.
    BinaryLag,
    /// Binary choice with state dependence and exogenous covariates.
    BinaryLagExog,
    /// Binary choice with duration-dependent state dependence.
    BinaryDuration,
    /// Multinomial choice with diagonal habit effects.
    MultinomialHabit,
}

impl ModelKind {
    /// Identifier used by the CLI and file formats.
    pub fn id(self) -> &'static str {
        match self {
            ModelKind::BinaryLag => "bc-ar1",
            ModelKind::BinaryLagExog => "bc-ar1-x",
            ModelKind::BinaryDuration => "bc-dur",
            ModelKind::MultinomialHabit => "mnl-diaghabit",
        }
    }

    /// Parse a CLI/file identifier.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "bc-ar1" => Ok(ModelKind::BinaryLag),
            "bc-ar1-x" => Ok(ModelKind::BinaryLagExog),
            "bc-dur" => Ok(ModelKind::BinaryDuration),
            "mnl-diaghabit" => Ok(ModelKind::MultinomialHabit),
            other => Err(Error::invalid(format!(
                "unknown model '{other}' (expected bc-ar1, bc-ar1-x, bc-dur, or mnl-diaghabit)"
            ))),
        }
    }
}

/// A fully specified model: variant plus its dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Which variant.
    pub kind: ModelKind,
    /// Number of alternatives J+1 (2 for the binary variants).
    pub num_alternatives: usize,
    /// Covariate width K (0 unless `BinaryLagExog`).
    pub num_covariates: usize,
    /// Duration cap d_max (meaningful for `BinaryDuration`; default 2).
    pub max_duration: usize,
}

impl ModelSpec {
    /// Binary model with first-order state dependence.
    pub fn binary_lag() -> Self {
        ModelSpec {
            kind: ModelKind::BinaryLag,
            num_alternatives: 2,
            num_covariates: 0,
            max_duration: 1,
        }
    }

    /// Binary model with state dependence and K covariates.
    pub fn binary_lag_exog(num_covariates: usize) -> Self {
        ModelSpec {
            kind: ModelKind::BinaryLagExog,
            num_alternatives: 2,
            num_covariates,
            max_duration: 1,
        }
    }

    /// Binary model with duration dependence capped at `max_duration`.
    pub fn binary_duration(max_duration: usize) -> Self {
        ModelSpec {
            kind: ModelKind::BinaryDuration,
            num_alternatives: 2,
            num_covariates: 0,
            max_duration,
        }
    }

    /// Multinomial diagonal-habit model with `num_alternatives` alternatives.
    pub fn multinomial_habit(num_alternatives: usize) -> Self {
        ModelSpec {
            kind: ModelKind::MultinomialHabit,
            num_alternatives,
            num_covariates: 0,
            max_duration: 1,
        }
    }

    /// Validate dimensional consistency.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ModelKind::BinaryLag | ModelKind::BinaryLagExog | ModelKind::BinaryDuration => {
                if self.num_alternatives != 2 {
                    return Err(Error::invalid(
                        "binary variants require exactly 2 alternatives".into(),
                    ));
                }
            }
            ModelKind::MultinomialHabit => {
                if self.num_alternatives < 2 {
                    return Err(Error::invalid("need at least 2 alternatives".into()));
                }
            }
        }
        if self.kind == ModelKind::BinaryLagExog && self.num_covariates == 0 {
            return Err(Error::invalid(
                "covariate model requires at least one covariate".into(),
            ));
        }
        if self.kind != ModelKind::BinaryLagExog && self.num_covariates != 0 {
            return Err(Error::invalid(
                "covariates are only supported by the bc-ar1-x variant".into(),
            ));
        }
        if self.kind == ModelKind::BinaryDuration && !(1..=16).contains(&self.max_duration) {
            return Err(Error::invalid("max_duration must be in 1..=16".into()));
        }
        Ok(())
    }

    /// Number of slope parameters.
    pub fn num_params(&self) -> usize {
        match self.kind {
            ModelKind::BinaryLag => 1,
            ModelKind::BinaryLagExog => 1 + self.num_covariates,
            ModelKind::BinaryDuration => self.max_duration,
            ModelKind::MultinomialHabit => self.num_alternatives - 1,
        }
    }

    /// Names of the slope parameters, in flat order.
    pub fn param_names(&self) -> Vec<String> {
        match self.kind {
            ModelKind::BinaryLag => vec!["beta".into()],
            ModelKind::BinaryLagExog => {
                let mut names = vec!["beta".to_string()];
                names.extend((1..=self.num_covariates).map(|k| format!("gamma{k}")));
                names
            }
            ModelKind::BinaryDuration => (1..=self.max_duration)
                .map(|d| format!("beta_d{d}"))
                .collect(),
            ModelKind::MultinomialHabit => (1..self.num_alternatives)
                .map(|j| format!("beta_{j}{j}"))
                .collect(),
        }
    }
}

/// Slope parameters: state-dependence coefficients plus (for the covariate
/// variant) covariate coefficients. Normalized entries (alternative 0) are
/// not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    /// State-dependence coefficients: `[β]`, `[β(1)..β(d_max)]`, or
    /// `[β_11..β_JJ]` depending on the variant.
    pub state: Vec<f64>,
    /// Covariate coefficients γ (empty unless `BinaryLagExog`).
    pub exog: Vec<f64>,
}

impl Theta {
    /// Scalar-β parameter vector for the binary lag model.
    pub fn binary(beta: f64) -> Self {
        Theta {
            state: vec![beta],
            exog: Vec::new(),
        }
    }

    /// β plus covariate coefficients for the covariate model.
    pub fn binary_exog(beta: f64, gamma: Vec<f64>) -> Self {
        Theta {
            state: vec![beta],
            exog: gamma,
        }
    }

    /// Duration coefficients β(1..d_max).
    pub fn duration(betas: Vec<f64>) -> Self {
        Theta {
            state: betas,
            exog: Vec::new(),
        }
    }

    /// Diagonal habit coefficients β_11..β_JJ.
    pub fn multinomial(betas: Vec<f64>) -> Self {
        Theta {
            state: betas,
            exog: Vec::new(),
        }
    }

    /// Check dimensions against a model spec.
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        let expect_state = match spec.kind {
            ModelKind::BinaryLag | ModelKind::BinaryLagExog => 1,
            ModelKind::BinaryDuration => spec.max_duration,
            ModelKind::MultinomialHabit => spec.num_alternatives - 1,
        };
        let expect_exog = spec.num_covariates;
        if self.state.len() != expect_state || self.exog.len() != expect_exog {
            return Err(Error::invalid(format!(
                "theta has {} state and {} covariate coefficients; model expects {} and {}",
                self.state.len(),
                self.exog.len(),
                expect_state,
                expect_exog
            )));
        }
        if self.state.iter().chain(&self.exog).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter value".into()));
        }
        Ok(())
    }

    /// Flat parameter vector (state coefficients, then covariate
    /// coefficients) matching [`ModelSpec::param_names`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.state.clone();
        out.extend_from_slice(&self.exog);
        out
    }

    /// Rebuild from a flat vector in [`ModelSpec::param_names`] order.
    pub fn from_flat(spec: &ModelSpec, values: &[f64]) -> Result<Self> {
        if values.len() != spec.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                spec.num_params(),
                values.len()
            )));
        }
        let split = spec.num_params() - spec.num_covariates;
        let theta = Theta {
            state: values[..split].to_vec(),
            exog: values[split..].to_vec(),
        };
        theta.validate_for(spec)?;
        Ok(theta)
    }
}

/// Spell length of each period's choice: element `p` counts the consecutive
/// periods through `p` (inclusive) holding choice `y[p]`, with `d1` pre-sample
/// periods credited to the first spell.
pub fn spell_lengths(y: &[u8], d1: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(y.len());
    let mut run = d1 + 1;
    out.push(run);
    for p in 1..y.len() {
        run = if y[p] == y[p - 1] { run + 1 } else { 1 };
        out.push(run);
    }
    out
}

/// Utilities of all alternatives for one transition. Alternative 0 is the
/// normalized reference (utility 0, no habit, no covariates by convention of
/// the covariate model attaching x to alternative 1).
fn utilities(
    y_prev: u8,
    duration: u32,
    x: Option<&[f64]>,
    alpha: &[f64],
    theta: &Theta,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    let m = spec.num_alternatives;
    if usize::from(y_prev) >= m {
        return Err(Error::invalid(format!("y_prev {y_prev} out of range")));
    }
    if alpha.len() != m - 1 {
        return Err(Error::invalid(format!(
            "alpha has {} entries; model needs {}",
            alpha.len(),
            m - 1
        )));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("non-finite heterogeneity value".into()));
    }
    theta.validate_for(spec)?;
    let mut u = vec![0.0; m];
    for j in 1..m {
        u[j] = alpha[j - 1];
    }
    match spec.kind {
        ModelKind::BinaryLag => {
            if y_prev == 1 {
                u[1] += theta.state[0];
            }
        }
        ModelKind::BinaryLagExog => {
            let x = x.ok_or_else(|| Error::invalid("covariate model needs x".into()))?;
            if x.len() != spec.num_covariates {
                return Err(Error::invalid(format!(
                    "x has {} entries; model needs {}",
                    x.len(),
                    spec.num_covariates
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite covariate value".into()));
            }
            if y_prev == 1 {
                u[1] += theta.state[0];
            }
            u[1] += x.iter().zip(&theta.exog).map(|(a, b)| a * b).sum::<f64>();
        }
        ModelKind::BinaryDuration => {
            if y_prev == 1 {
                if duration == 0 {
                    return Err(Error::invalid(
                        "duration 0 is inconsistent with previous choice 1".into(),
                    ));
                }
                let d = (duration as usize).min(spec.max_duration);
                u[1] += theta.state[d - 1];
            }
        }
        ModelKind::MultinomialHabit => {
            if y_prev >= 1 {
                u[usize::from(y_prev)] += theta.state[usize::from(y_prev) - 1];
            }
        }
    }
    Ok(u)
}

/// Transition probability of choosing alternative `j` given the previous
/// choice, its spell duration, covariates, heterogeneity, and parameters.
///
/// `duration` is the spell length of `y_prev` (consecutive periods through
/// t−1 holding `y_prev`); it only matters for the duration variant and must
/// be ≥ 1 when `y_prev = 1` there. Values above `max_duration` are capped.
pub fn choice_prob(
    j: u8,
    y_prev: u8,
    duration: u32,
    x: Option<&[f64]>,
    alpha: &[f64],
    theta: &Theta,
    spec: &ModelSpec,
) -> Result<f64> {
    spec.validate()?;
    if usize::from(j) >= spec.num_alternatives {
        return Err(Error::invalid(format!("alternative {j} out of range")));
    }
    let u = utilities(y_prev, duration, x, alpha, theta, spec)?;
    if spec.num_alternatives == 2 {
        // Binary case: stable logistic on the single utility.
        Ok(if j == 1 {
            logistic(u[1])
        } else {
            logistic(-u[1])
        })
    } else {
        Ok(softmax(&u)[usize::from(j)])
    }
}

/// Log-probability of a whole history given heterogeneity and an explicit
/// probability for the initial condition `(y_1, d_1)`.
pub fn history_log_prob(
    y: &[u8],
    x: Option<&[Vec<f64>]>,
    d1: u32,
    alpha: &[f64],
    theta: &Theta,
    spec: &ModelSpec,
    initial_prob: f64,
) -> Result<f64> {
    spec.validate()?;
    if y.len() < 2 {
        return Err(Error::invalid("history must have at least 2 periods".into()));
    }
    if !(initial_prob > 0.0 && initial_prob <= 1.0) {
        return Err(Error::invalid(format!(
            "initial probability must be in (0,1], got {initial_prob}"
        )));
    }
    if let Some(x) = x {
        if x.len() != y.len() {
            return Err(Error::invalid(
                "covariate history length must match choice history".into(),
            ));
        }
    }
    let runs = spell_lengths(y, d1);
    let mut log_p = initial_prob.ln();
    for t in 1..y.len() {
        let xt = x.map(|x| x[t].as_slice());
        let u = utilities(y[t - 1], runs[t - 1], xt, alpha, theta, spec)?;
        if spec.num_alternatives == 2 {
            let sign = if y[t] == 1 { 1.0 } else { -1.0 };
            log_p += log_logistic(sign * u[1]);
        } else {
            let p = softmax(&u);
            log_p += p[usize::from(y[t])].ln();
        }
    }
    Ok(log_p)
}

/// The part of a history's log-probability that interacts with the
/// heterogeneity: initial condition, per-alternative numerator counts, and
/// the multiset of logit-denominator tags. Histories with equal signatures
/// (and equal covariate histories) have probability ratios free of α.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AlphaSignature {
    /// Binary lag model: `(y_1, y_T, Σ_{t≥2} y_t)`.
    BinaryLag {
        /// First-period choice.
        first: u8,
        /// Last-period choice.
        last: u8,
        /// Count of 1s after the first period.
        ones: u32,
    },
    /// Covariate model: initial choice, count of 1s, and the sorted multiset
    /// of per-transition tags `(y_{t−1}, bits(x_t))`.
    BinaryLagExog {
        /// First-period choice.
        first: u8,
        /// Count of 1s after the first period.
        ones: u32,
        /// Sorted `(previous choice, covariate bit pattern)` tags.
        tags: Vec<(u8, Vec<u64>)>,
    },
    /// Duration model: initial choice and capped initial spell, count of 1s,
    /// and the sorted multiset of capped-duration tags (0 when the previous
    /// choice was 0).
    BinaryDuration {
        /// First-period choice.
        first: u8,
        /// Capped spell length of the first period (0 when `first = 0`).
        first_dur: u8,
        /// Count of 1s after the first period.
        ones: u32,
        /// Sorted per-transition tags `min(run, d_max)·1{y_{t−1}=1}`.
        tags: Vec<u8>,
    },
    /// Multinomial habit model: initial choice, per-alternative counts after
    /// the first period, and the sorted multiset of previous choices.
    MultinomialHabit {
        /// First-period choice.
        first: u8,
        /// Count of each alternative `1..=J` after the first period.
        counts: Vec<u32>,
        /// Sorted previous-choice tags.
        tags: Vec<u8>,
    },
}

/// Compute the sufficient-statistic signature of a history.
pub fn alpha_signature(
    y: &[u8],
    x: Option<&[Vec<f64>]>,
    d1: u32,
    spec: &ModelSpec,
) -> Result<AlphaSignature> {
    spec.validate()?;
    if y.len() < 2 {
        return Err(Error::invalid("history must have at least 2 periods".into()));
    }
    match spec.kind {
        ModelKind::BinaryLag => Ok(AlphaSignature::BinaryLag {
            first: y[0],
            last: y[y.len() - 1],
            ones: y[1..].iter().map(|&c| u32::from(c)).sum(),
        }),
        ModelKind::BinaryLagExog => {
            let x = x.ok_or_else(|| Error::invalid("covariate model needs x".into()))?;
            if x.len() != y.len() {
                return Err(Error::invalid(
                    "covariate history length must match choice history".into(),
                ));
            }
            let mut tags: Vec<(u8, Vec<u64>)> = (1..y.len())
                .map(|t| (y[t - 1], x_bits(&x[t..=t])))
                .collect();
            tags.sort();
            Ok(AlphaSignature::BinaryLagExog {
                first: y[0],
                ones: y[1..].iter().map(|&c| u32::from(c)).sum(),
                tags,
            })
        }
        ModelKind::BinaryDuration => {
            let runs = spell_lengths(y, d1);
            let cap = |r: u32| r.min(spec.max_duration as u32) as u8;
            let mut tags: Vec<u8> = (1..y.len())
                .map(|t| if y[t - 1] == 1 { cap(runs[t - 1]) } else { 0 })
                .collect();
            tags.sort_unstable();
            Ok(AlphaSignature::BinaryDuration {
                first: y[0],
                first_dur: if y[0] == 1 { cap(runs[0]) } else { 0 },
                ones: y[1..].iter().map(|&c| u32::from(c)).sum(),
                tags,
            })
        }
        ModelKind::MultinomialHabit => {
            let mut counts = vec![0u32; spec.num_alternatives - 1];
            for &c in &y[1..] {
                if c >= 1 {
                    counts[usize::from(c) - 1] += 1;
                }
            }
            let mut tags: Vec<u8> = y[..y.len() - 1].to_vec();
            tags.sort_unstable();
            Ok(AlphaSignature::MultinomialHabit {
                first: y[0],
                counts,
                tags,
            })
        }
    }
}

/// The statistics multiplying the slope parameters in a history's
/// log-probability (inner product with `Theta::flat()` gives the θ-part).
pub fn theta_statistics(
    y: &[u8],
    x: Option<&[Vec<f64>]>,
    d1: u32,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if y.len() < 2 {
        return Err(Error::invalid("history must have at least 2 periods".into()));
    }
    match spec.kind {
        ModelKind::BinaryLag => {
            let n11 = (1..y.len()).filter(|&t| y[t] == 1 && y[t - 1] == 1).count();
            Ok(vec![n11 as f64])
        }
        ModelKind::BinaryLagExog => {
            let x = x.ok_or_else(|| Error::invalid("covariate model needs x".into()))?;
            if x.len() != y.len() {
                return Err(Error::invalid(
                    "covariate history length must match choice history".into(),
                ));
            }
            let n11 = (1..y.len()).filter(|&t| y[t] == 1 && y[t - 1] == 1).count();
            let mut stats = vec![n11 as f64];
            for k in 0..spec.num_covariates {
                stats.push(
                    (1..y.len())
                        .filter(|&t| y[t] == 1)
                        .map(|t| x[t][k])
                        .sum::<f64>(),
                );
            }
            Ok(stats)
        }
        ModelKind::BinaryDuration => {
            let runs = spell_lengths(y, d1);
            let mut stats = vec![0.0; spec.max_duration];
            for t in 1..y.len() {
                if y[t] == 1 && y[t - 1] == 1 {
                    let d = (runs[t - 1] as usize).min(spec.max_duration);
                    stats[d - 1] += 1.0;
                }
            }
            Ok(stats)
        }
        ModelKind::MultinomialHabit => {
            let mut stats = vec![0.0; spec.num_alternatives - 1];
            for t in 1..y.len() {
                if y[t] >= 1 && y[t] == y[t - 1] {
                    stats[usize::from(y[t]) - 1] += 1.0;
                }
            }
            Ok(stats)
        }
    }
}

/// All `(J+1)^t` histories of length `t`, in lexicographic order.
pub fn enumerate_histories(num_alternatives: usize, t: usize) -> Result<Vec<Vec<u8>>> {
    let total = (num_alternatives as f64).powi(t as i32);
    if total > 1e7 {
        return Err(Error::invalid(format!(
            "enumeration guard exceeded: {num_alternatives}^{t} > 1e7 histories"
        )));
    }
    let total = num_alternatives.pow(t as u32);
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0u8; t];
    loop {
        out.push(current.clone());
        let mut pos = t;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if usize::from(current[pos]) + 1 < num_alternatives {
                current[pos] += 1;
                for slot in current.iter_mut().skip(pos + 1) {
                    *slot = 0;
                }
                break;
            }
        }
    }
}

/// One equivalence class: all histories of a fixed length sharing an
/// [`AlphaSignature`] in a fixed `(d1, x)` context, with their
/// [`theta_statistics`].
#[derive(Debug, Clone)]
pub struct Class {
    /// The shared signature.
    pub signature: AlphaSignature,
    /// Member histories, in lexicographic order.
    pub members: Vec<Vec<u8>>,
    /// `theta_statistics` of each member, aligned with `members`.
    pub stats: Vec<Vec<f64>>,
}

/// Partition all `(J+1)^t` histories by signature in the given context
/// (initial duration and, for the covariate variant, the covariate history).
pub fn sufficiency_classes(
    spec: &ModelSpec,
    t: usize,
    d1: u32,
    x: Option<&[Vec<f64>]>,
) -> Result<Vec<Class>> {
    spec.validate()?;
    if t < 2 {
        return Err(Error::invalid("window length must be ≥ 2".into()));
    }
    let mut classes: std::collections::BTreeMap<AlphaSignature, Class> =
        std::collections::BTreeMap::new();
    for y in enumerate_histories(spec.num_alternatives, t)? {
        let sig = alpha_signature(&y, x, d1, spec)?;
        let stats = theta_statistics(&y, x, d1, spec)?;
        let entry = classes.entry(sig.clone()).or_insert_with(|| Class {
            signature: sig,
            members: Vec::new(),
            stats: Vec::new(),
        });
        entry.members.push(y);
        entry.stats.push(stats);
    }
    Ok(classes.into_values().collect())
}
