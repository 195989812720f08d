//! Data-generating processes and the Monte Carlo experiment runner.
//!
//! Six named DGPs cover the crossing of slope ∈ {+1, −1} with no
//! heterogeneity, a two-point mixture, and a normal mixture. The runner
//! simulates panels, fits the requested estimators, runs specification
//! tests, and aggregates bias / dispersion / RMSE per estimator plus the
//! sorted p-value data per test.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{hausman, HausmanKind};
use crate::likelihood::{cml_fit, CmlOptions, CollapsedPanel, ThetaEstimate};
use crate::model::ModelSpec;
use crate::numeric::{logistic, population_sd};
use crate::panel::{HistoryDistribution, Individual, Panel};
use crate::remle::{
    mle_finite_mixture_from_counts, mle_nouh_from_counts, true_ame, HeterogeneityDist,
    MixtureOptions, TruthKind,
};
use crate::rng::{derive_seed, stream_rng};
use crate::weights::{ame1_from_weights, closed_form_weights, solve_weights, WeightTable};

/// Default bootstrap replicate count for effect-comparison tests.
pub const DEFAULT_BOOTSTRAP_B: usize = 99;

/// A binary-lag data-generating process: slope, heterogeneity distribution,
/// and the initial rule P(y_1 = 1 | α) = Λ(α).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// One of the six canonical names, or a free-form custom label.
    pub label: String,
    /// State-dependence slope.
    pub beta: f64,
    /// Distribution of the individual intercept.
    pub het: HeterogeneityDist,
}

/// The two-point heterogeneity used by the named mixture DGPs.
fn named_finite_mixture() -> HeterogeneityDist {
    HeterogeneityDist::FiniteMixture {
        points: vec![-1.0, 0.5],
        probs: vec![0.3, 0.7],
    }
}

/// The normal-mixture heterogeneity used by the named normal DGPs.
fn named_normal_mixture() -> HeterogeneityDist {
    HeterogeneityDist::NormalMixture {
        means: vec![-1.0, 0.5],
        sds: vec![3.0, 3.0],
        probs: vec![0.3, 0.7],
    }
}

/// Strip spaces and parentheses, lowercase: `"NoUH (+1)"` → `"nouh+1"`.
fn normalize_label(label: &str) -> String {
    label
        .chars()
        .filter(|c| !matches!(c, ' ' | '(' | ')'))
        .flat_map(char::to_lowercase)
        .collect()
}

impl DgpSpec {
    /// The six canonical DGP names.
    pub const NAMED: [&'static str; 6] = [
        "NoUH+1",
        "NoUH-1",
        "FinMix+1",
        "FinMix-1",
        "MixNor+1",
        "MixNor-1",
    ];

    fn named_spec(normalized: &str) -> Option<DgpSpec> {
        let (label, beta, het) = match normalized {
            "nouh+1" => ("NoUH+1", 1.0, HeterogeneityDist::Degenerate { value: 0.0 }),
            "nouh-1" => ("NoUH-1", -1.0, HeterogeneityDist::Degenerate { value: 0.0 }),
            "finmix+1" => ("FinMix+1", 1.0, named_finite_mixture()),
            "finmix-1" => ("FinMix-1", -1.0, named_finite_mixture()),
            "mixnor+1" => ("MixNor+1", 1.0, named_normal_mixture()),
            "mixnor-1" => ("MixNor-1", -1.0, named_normal_mixture()),
            _ => return None,
        };
        Some(DgpSpec {
            label: label.to_string(),
            beta,
            het,
        })
    }

    /// Look up one of the six canonical DGPs by name (spaces and
    /// parentheses in the label are ignored, case-insensitively).
    pub fn from_label(label: &str) -> Result<Self> {
        DgpSpec::named_spec(&normalize_label(label)).ok_or_else(|| {
            Error::invalid(format!(
                "unknown DGP label '{label}'; expected one of {}",
                DgpSpec::NAMED.join(", ")
            ))
        })
    }

    /// Build a custom DGP. A label that collides with a canonical name must
    /// carry exactly the canonical parameters.
    pub fn custom(label: impl Into<String>, beta: f64, het: HeterogeneityDist) -> Result<Self> {
        let spec = DgpSpec {
            label: label.into(),
            beta,
            het,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check heterogeneity validity and label↔parameter consistency for the
    /// canonical names.
    pub fn validate(&self) -> Result<()> {
        self.het.validate()?;
        if !self.beta.is_finite() {
            return Err(Error::invalid("slope must be finite".into()));
        }
        if let Some(canonical) = DgpSpec::named_spec(&normalize_label(&self.label)) {
            if self.beta != canonical.beta || self.het != canonical.het {
                return Err(Error::invalid(format!(
                    "DGP labeled '{}' does not carry the canonical parameters \
                     (slope {}, {:?})",
                    self.label, canonical.beta, canonical.het
                )));
            }
        }
        Ok(())
    }

    /// Population one-period effect of the lagged state under this DGP.
    pub fn true_ame1(&self) -> Result<f64> {
        true_ame(self.beta, &self.het, TruthKind::Ame1)
    }

    /// True when the intercept distribution is a point mass — the case in
    /// which the two-point mixture estimator is not identified and is
    /// skipped.
    pub fn has_heterogeneity(&self) -> bool {
        !matches!(self.het, HeterogeneityDist::Degenerate { .. })
    }
}

/// Reusable intercept sampler built once per simulated panel.
enum AlphaSampler {
    Point(f64),
    Finite {
        points: Vec<f64>,
        component: WeightedIndex<f64>,
    },
    Normal {
        means: Vec<f64>,
        sds: Vec<f64>,
        component: WeightedIndex<f64>,
    },
}

impl AlphaSampler {
    fn new(het: &HeterogeneityDist) -> Result<Self> {
        let weighted = |probs: &[f64]| {
            WeightedIndex::new(probs.iter().copied())
                .map_err(|e| Error::invalid(format!("bad component probabilities: {e}")))
        };
        Ok(match het {
            HeterogeneityDist::Degenerate { value } => AlphaSampler::Point(*value),
            HeterogeneityDist::FiniteMixture { points, probs } => AlphaSampler::Finite {
                points: points.clone(),
                component: weighted(probs)?,
            },
            HeterogeneityDist::NormalMixture { means, sds, probs } => AlphaSampler::Normal {
                means: means.clone(),
                sds: sds.clone(),
                component: weighted(probs)?,
            },
        })
    }

    fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match self {
            AlphaSampler::Point(value) => *value,
            AlphaSampler::Finite { points, component } => points[component.sample(rng)],
            AlphaSampler::Normal {
                means,
                sds,
                component,
            } => {
                let k = component.sample(rng);
                let z: f64 = rng.sample(StandardNormal);
                means[k] + sds[k] * z
            }
        }
    }
}

/// Simulate a balanced binary panel: individual `i` draws from the
/// dedicated stream `(seed, i)`, so the panel is deterministic given the
/// seed and independent of iteration order.
pub fn simulate_panel(dgp: &DgpSpec, n_individuals: usize, t: usize, seed: u64) -> Result<Panel> {
    dgp.validate()?;
    if n_individuals < 1 {
        return Err(Error::invalid("need at least one individual".into()));
    }
    if t < 2 {
        return Err(Error::invalid(format!("panel length must be ≥ 2, got {t}")));
    }
    let sampler = AlphaSampler::new(&dgp.het)?;
    let individuals = (0..n_individuals)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let alpha = sampler.sample(&mut rng);
            let mut y = Vec::with_capacity(t);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, p: f64| u8::from(rng.random::<f64>() < p);
            y.push(draw(&mut rng, logistic(alpha)));
            for _ in 1..t {
                let prev = f64::from(*y.last().expect("nonempty"));
                y.push(draw(&mut rng, logistic(alpha + dgp.beta * prev)));
            }
            Individual {
                id: i.to_string(),
                y,
                x: None,
                d1: None,
            }
        })
        .collect();
    Panel::new(individuals, 2)
}

/// The estimators the experiment runner knows how to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Conditional maximum likelihood with fixed effects, plus the
    /// weight-based effect estimator.
    FeCml,
    /// Full MLE that (wrongly, in general) assumes a common intercept.
    NoUhMle,
    /// Full MLE with a two-point intercept mixture and free
    /// initial-period probabilities.
    ReMle,
}

impl EstimatorKind {
    /// Stable token used in configs and output.
    pub fn token(&self) -> &'static str {
        match self {
            EstimatorKind::FeCml => "FE-CMLE",
            EstimatorKind::NoUhMle => "NoUH-MLE",
            EstimatorKind::ReMle => "RE-MLE",
        }
    }

    /// Parse a token (case-insensitive).
    pub fn from_token(token: &str) -> Result<Self> {
        match token.to_ascii_uppercase().as_str() {
            "FE-CMLE" | "FE" => Ok(EstimatorKind::FeCml),
            "NOUH-MLE" | "NOUH" => Ok(EstimatorKind::NoUhMle),
            "RE-MLE" | "RE" => Ok(EstimatorKind::ReMle),
            other => Err(Error::invalid(format!(
                "unknown estimator '{other}' (expected FE-CMLE, NoUH-MLE, or RE-MLE)"
            ))),
        }
    }
}

impl Serialize for EstimatorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for EstimatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let token = String::deserialize(d)?;
        EstimatorKind::from_token(&token).map_err(serde::de::Error::custom)
    }
}

/// The two Hausman specification tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum HausmanTest {
    /// Slope comparison, asymptotic variances.
    Beta,
    /// Effect comparison, bootstrap variances.
    Ame,
}

impl HausmanTest {
    /// Stable token used in configs and output.
    pub fn token(&self) -> &'static str {
        match self {
            HausmanTest::Beta => "HS_beta",
            HausmanTest::Ame => "HS_AME",
        }
    }

    /// Parse a token (case-insensitive).
    pub fn from_token(token: &str) -> Result<Self> {
        match token.to_ascii_uppercase().as_str() {
            "HS_BETA" | "BETA" => Ok(HausmanTest::Beta),
            "HS_AME" | "AME" => Ok(HausmanTest::Ame),
            other => Err(Error::invalid(format!(
                "unknown test '{other}' (expected HS_beta or HS_AME)"
            ))),
        }
    }

    fn hausman_kind(&self) -> HausmanKind {
        match self {
            HausmanTest::Beta => HausmanKind::Beta,
            HausmanTest::Ame => HausmanKind::Ame,
        }
    }
}

impl Serialize for HausmanTest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for HausmanTest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let token = String::deserialize(d)?;
        HausmanTest::from_token(&token).map_err(serde::de::Error::custom)
    }
}

/// DGP field of a config file: a canonical label or a full specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DgpInput {
    /// One of the canonical names.
    Label(String),
    /// A full specification (validated on resolve).
    Spec(DgpSpec),
}

impl DgpInput {
    /// Resolve to a validated specification.
    pub fn resolve(&self) -> Result<DgpSpec> {
        match self {
            DgpInput::Label(label) => DgpSpec::from_label(label),
            DgpInput::Spec(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::FeCml,
        EstimatorKind::NoUhMle,
        EstimatorKind::ReMle,
    ]
}

fn default_bootstrap_b() -> usize {
    DEFAULT_BOOTSTRAP_B
}

fn default_null() -> EstimatorKind {
    EstimatorKind::ReMle
}

/// Experiment configuration; serialized form uses the documented keys
/// `{dgp, N, T, R, estimators, tests, seed, bootstrap_B, null}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Data-generating process (label or full spec).
    pub dgp: DgpInput,
    /// Individuals per simulated panel.
    #[serde(rename = "N")]
    pub n: usize,
    /// Periods per simulated panel.
    #[serde(rename = "T")]
    pub t: usize,
    /// Number of Monte Carlo replications.
    #[serde(rename = "R")]
    pub r: usize,
    /// Estimators to fit each replication.
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Specification tests to run each replication.
    #[serde(default)]
    pub tests: Vec<HausmanTest>,
    /// Master seed; replication `r` simulates from the derived seed
    /// `(seed, 2r)` and bootstraps from `(seed, 2r+1)`.
    pub seed: u64,
    /// Bootstrap replicates per effect-comparison test.
    #[serde(rename = "bootstrap_B", default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    /// Which estimator plays the efficient-under-the-null role in tests.
    #[serde(rename = "null", default = "default_null")]
    pub null_estimator: EstimatorKind,
}

/// Aggregates for one estimator across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// Which estimator.
    pub estimator: EstimatorKind,
    /// Replications that produced a usable estimate.
    pub n_success: usize,
    /// Replications excluded (errors or degenerate mixture fits).
    pub n_failed: usize,
    /// DGP slope.
    pub true_beta: f64,
    /// Mean slope estimate over successful replications.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta_mean: Option<f64>,
    /// Dispersion (population convention, so RMSE² = bias² + sd²).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta_sd: Option<f64>,
    /// DGP one-period effect.
    pub true_ame: f64,
    /// Mean effect estimate.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ame_mean: Option<f64>,
    /// Effect dispersion (population convention).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ame_sd: Option<f64>,
    /// Root mean squared error of the effect against the DGP truth.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ame_rmse: Option<f64>,
    /// First few failure messages.
    pub failures: Vec<String>,
    /// Non-fatal notes (single-replication dispersion, …).
    pub warnings: Vec<String>,
}

/// Aggregates for one specification test across replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestSummary {
    /// Which test.
    pub test: HausmanTest,
    /// The estimator used as the null.
    pub null_estimator: EstimatorKind,
    /// Sorted p-values from replications where the test was valid.
    pub p_values: Vec<f64>,
    /// Replications with a valid test.
    pub n_valid: usize,
    /// Replications where the variance ordering failed (denominator ≤ 0).
    pub n_invalid: usize,
    /// Replications where an input estimate or the bootstrap failed.
    pub n_failed: usize,
    /// Share of replications whose outcome contradicts the null at the 5%
    /// level, over valid + invalid replications. A replication counts
    /// against the null either because its p-value is below 0.05 or
    /// because the estimated variance ordering contradicts the null's
    /// efficiency premise (denominator ≤ 0): under the null the restricted
    /// estimator is efficient, so its variance cannot exceed the robust
    /// one except by sampling noise. `n_invalid` reports how many
    /// replications fell in that second bucket.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rejection_rate_5pct: Option<f64>,
    /// First few failure messages.
    pub failures: Vec<String>,
}

/// Full output of [`run_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Resolved data-generating process.
    pub dgp: DgpSpec,
    /// Individuals per panel.
    #[serde(rename = "N")]
    pub n: usize,
    /// Periods per panel.
    #[serde(rename = "T")]
    pub t: usize,
    /// Replication count.
    #[serde(rename = "R")]
    pub r: usize,
    /// Master seed.
    pub seed: u64,
    /// Bootstrap replicates used by effect-comparison tests.
    #[serde(rename = "bootstrap_B")]
    pub bootstrap_b: usize,
    /// Per-estimator aggregates, in canonical order.
    pub estimators: Vec<EstimatorSummary>,
    /// Per-test aggregates.
    pub tests: Vec<TestSummary>,
    /// Experiment-level notes (skipped estimators, …).
    pub warnings: Vec<String>,
}

/// Collapse a balanced binary panel into history counts.
fn panel_counts(panel: &Panel) -> BTreeMap<Vec<u8>, f64> {
    let mut counts = BTreeMap::new();
    for ind in panel.individuals() {
        *counts.entry(ind.y.clone()).or_insert(0.0) += 1.0;
    }
    counts
}

fn weight_table_for(t: usize, beta: f64) -> Result<WeightTable> {
    if (3..=7).contains(&t) {
        closed_form_weights(t, beta)
    } else {
        solve_weights(t, beta)
    }
}

fn distribution_from_counts(
    counts: &BTreeMap<Vec<u8>, f64>,
    t: usize,
) -> Result<HistoryDistribution> {
    let total: f64 = counts.values().sum();
    HistoryDistribution::from_parts(
        t,
        counts
            .iter()
            .map(|(y, w)| (y.clone(), None, w / total)),
        total.round() as usize,
    )
}

/// One fitted FE estimate: slope, its variance, and the weight-based
/// effect estimate.
struct FeFit {
    beta: f64,
    var_beta: f64,
    ame: f64,
    theta: Vec<f64>,
}

fn fit_fe(
    counts: &BTreeMap<Vec<u8>, f64>,
    t: usize,
    init: Option<Vec<f64>>,
) -> Result<FeFit> {
    let spec = ModelSpec::binary_lag();
    let collapsed = CollapsedPanel::from_weighted_histories(
        &spec,
        counts.iter().map(|(y, w)| (y.clone(), None, 0u32, *w)),
    )?;
    let est: ThetaEstimate = cml_fit(
        &collapsed,
        &CmlOptions {
            init,
            ..CmlOptions::default()
        },
    )?;
    let beta = est.theta[0];
    let table = weight_table_for(t, beta)?;
    let dist = distribution_from_counts(counts, t)?;
    let ame = ame1_from_weights(&table, &dist)?;
    Ok(FeFit {
        beta,
        var_beta: est.covariance[0][0],
        ame,
        theta: est.theta,
    })
}

/// One fitted full-likelihood estimate plus the warm-start vector for
/// bootstrap refits.
struct FullFit {
    beta: f64,
    var_beta: f64,
    ame: f64,
    degenerate: bool,
    warm: FullWarm,
}

#[derive(Clone, Copy)]
enum FullWarm {
    NoUh,
    Mixture([f64; 6]),
}

fn logit_clamped(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn fit_full(
    counts: &BTreeMap<Vec<u8>, f64>,
    estimator: EstimatorKind,
    warm: Option<&FullWarm>,
) -> Result<FullFit> {
    match estimator {
        EstimatorKind::NoUhMle => {
            let est = mle_nouh_from_counts(counts)?;
            Ok(FullFit {
                beta: est.beta,
                var_beta: est.covariance[0][0],
                ame: est.ame1,
                degenerate: false,
                warm: FullWarm::NoUh,
            })
        }
        EstimatorKind::ReMle => {
            let options = match warm {
                Some(FullWarm::Mixture(phi)) => MixtureOptions {
                    init: Some(*phi),
                    em_iters: 5,
                    ..MixtureOptions::default()
                },
                _ => MixtureOptions::default(),
            };
            let est = mle_finite_mixture_from_counts(counts, 2, &options)?;
            let HeterogeneityDist::FiniteMixture { points, probs } = &est.het else {
                return Err(Error::computation(
                    "mixture fit returned a non-mixture distribution".into(),
                ));
            };
            let phi = [
                est.beta,
                points[0],
                points[1],
                logit_clamped(probs[0]),
                logit_clamped(est.initial_probs[0]),
                logit_clamped(est.initial_probs[1]),
            ];
            Ok(FullFit {
                beta: est.beta,
                var_beta: est.covariance[0][0],
                ame: est.ame1,
                degenerate: !est.warnings.is_empty(),
                warm: FullWarm::Mixture(phi),
            })
        }
        EstimatorKind::FeCml => Err(Error::invalid(
            "the FE estimator is not a full-likelihood null".into(),
        )),
    }
}

/// Multinomial resample of history counts (the count-space equivalent of
/// resampling individuals with replacement).
fn resample_counts<R: rand::Rng>(
    rng: &mut R,
    cells: &[(Vec<u8>, f64)],
    cell_index: &WeightedIndex<f64>,
    draws: usize,
) -> BTreeMap<Vec<u8>, f64> {
    let mut out = BTreeMap::new();
    for _ in 0..draws {
        *out.entry(cells[cell_index.sample(rng)].0.clone())
            .or_insert(0.0) += 1.0;
    }
    out
}

/// Bootstrap variance of both effect estimates on shared multinomial
/// resamples, warm-started at the parent fits.
fn bootstrap_ame_variances(
    counts: &BTreeMap<Vec<u8>, f64>,
    t: usize,
    fe: &FeFit,
    null: &FullFit,
    null_kind: EstimatorKind,
    b: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let cells: Vec<(Vec<u8>, f64)> = counts.iter().map(|(y, w)| (y.clone(), *w)).collect();
    let cell_index = WeightedIndex::new(cells.iter().map(|(_, w)| *w))
        .map_err(|e| Error::computation(format!("bad resampling weights: {e}")))?;
    let draws = counts.values().sum::<f64>().round() as usize;
    let mut fe_ames = Vec::with_capacity(b);
    let mut null_ames = Vec::with_capacity(b);
    let mut failures = 0usize;
    let mut first_error = String::new();
    for rep in 0..b {
        let mut rng = stream_rng(seed, rep as u64);
        let resampled = resample_counts(&mut rng, &cells, &cell_index, draws);
        let outcome = fit_fe(&resampled, t, Some(fe.theta.clone())).and_then(|fe_b| {
            let null_b = fit_full(&resampled, null_kind, Some(&null.warm))?;
            Ok((fe_b.ame, null_b.ame))
        });
        match outcome {
            Ok((a, c)) => {
                fe_ames.push(a);
                null_ames.push(c);
            }
            Err(e) => {
                failures += 1;
                if first_error.is_empty() {
                    first_error = e.to_string();
                }
            }
        }
    }
    if failures as f64 > 0.05 * b as f64 {
        return Err(Error::computation(format!(
            "bootstrap refits failed on {failures} of {b} resamples (> 5%): {first_error}"
        )));
    }
    let var = |v: &[f64]| -> Result<f64> {
        crate::numeric::sample_sd(v)
            .map(|sd| sd * sd)
            .ok_or_else(|| {
                Error::computation("too few bootstrap successes for a variance".into())
            })
    };
    Ok((var(&fe_ames)?, var(&null_ames)?))
}

/// Outcome of a single replication.
struct RepOutcome {
    fe: Option<std::result::Result<FeFit, String>>,
    nouh: Option<std::result::Result<FullFit, String>>,
    re: Option<std::result::Result<FullFit, String>>,
    tests: BTreeMap<HausmanTest, std::result::Result<Option<f64>, String>>,
}

#[allow(clippy::too_many_arguments)]
fn run_one_replication(
    dgp: &DgpSpec,
    n: usize,
    t: usize,
    rep: usize,
    seed: u64,
    estimators: &[EstimatorKind],
    tests: &[HausmanTest],
    null_kind: EstimatorKind,
    bootstrap_b: usize,
) -> RepOutcome {
    let panel_seed = derive_seed(seed, 2 * rep as u64);
    let boot_seed = derive_seed(seed, 2 * rep as u64 + 1);
    let mut outcome = RepOutcome {
        fe: None,
        nouh: None,
        re: None,
        tests: BTreeMap::new(),
    };
    let panel = match simulate_panel(dgp, n, t, panel_seed) {
        Ok(p) => p,
        Err(e) => {
            let msg = format!("simulation failed: {e}");
            for &est in estimators {
                match est {
                    EstimatorKind::FeCml => outcome.fe = Some(Err(msg.clone())),
                    EstimatorKind::NoUhMle => outcome.nouh = Some(Err(msg.clone())),
                    EstimatorKind::ReMle => outcome.re = Some(Err(msg.clone())),
                }
            }
            for &test in tests {
                outcome.tests.insert(test, Err(msg.clone()));
            }
            return outcome;
        }
    };
    let counts = panel_counts(&panel);

    for &est in estimators {
        match est {
            EstimatorKind::FeCml => {
                outcome.fe = Some(fit_fe(&counts, t, None).map_err(|e| e.to_string()));
            }
            EstimatorKind::NoUhMle => {
                outcome.nouh =
                    Some(fit_full(&counts, est, None).map_err(|e| e.to_string()));
            }
            EstimatorKind::ReMle => {
                outcome.re = Some(
                    fit_full(&counts, est, None)
                        .map_err(|e| e.to_string())
                        .and_then(|fit| {
                            if fit.degenerate {
                                Err("degenerate mixture fit (excluded)".to_string())
                            } else {
                                Ok(fit)
                            }
                        }),
                );
            }
        }
    }

    for &test in tests {
        let fe = match &outcome.fe {
            Some(Ok(fe)) => fe,
            _ => {
                outcome
                    .tests
                    .insert(test, Err("FE estimate unavailable".to_string()));
                continue;
            }
        };
        let null_slot = match null_kind {
            EstimatorKind::NoUhMle => &outcome.nouh,
            EstimatorKind::ReMle => &outcome.re,
            EstimatorKind::FeCml => unreachable!("validated earlier"),
        };
        let null = match null_slot {
            Some(Ok(full)) => full,
            _ => {
                outcome
                    .tests
                    .insert(test, Err("null estimate unavailable".to_string()));
                continue;
            }
        };
        let result = match test {
            HausmanTest::Beta => hausman(
                (fe.beta, fe.var_beta),
                (null.beta, null.var_beta),
                test.hausman_kind(),
            )
            .map(|r| r.p_value)
            .map_err(|e| e.to_string()),
            HausmanTest::Ame => bootstrap_ame_variances(
                &counts,
                t,
                fe,
                null,
                null_kind,
                bootstrap_b,
                boot_seed,
            )
            .and_then(|(var_fe, var_null)| {
                hausman((fe.ame, var_fe), (null.ame, var_null), test.hausman_kind())
            })
            .map(|r| r.p_value)
            .map_err(|e| e.to_string()),
        };
        outcome.tests.insert(test, result);
    }
    outcome
}

fn summarize_estimator(
    estimator: EstimatorKind,
    outcomes: &[RepOutcome],
    true_beta: f64,
    true_ame: f64,
    r: usize,
) -> Result<EstimatorSummary> {
    let mut betas = Vec::new();
    let mut ames = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.iter().enumerate() {
        let slot = match estimator {
            EstimatorKind::FeCml => {
                outcome.fe.as_ref().map(|r| r.as_ref().map(|f| (f.beta, f.ame)))
            }
            EstimatorKind::NoUhMle => outcome
                .nouh
                .as_ref()
                .map(|r| r.as_ref().map(|f| (f.beta, f.ame))),
            EstimatorKind::ReMle => outcome
                .re
                .as_ref()
                .map(|r| r.as_ref().map(|f| (f.beta, f.ame))),
        };
        match slot {
            Some(Ok((beta, ame))) => {
                betas.push(beta);
                ames.push(ame);
            }
            Some(Err(e)) => failures.push(format!("replication {rep}: {e}")),
            None => failures.push(format!("replication {rep}: not run")),
        }
    }
    if failures.len() as f64 > 0.10 * r as f64 {
        return Err(Error::computation(format!(
            "{} failed on {} of {} replications (> 10%): {}",
            estimator.token(),
            failures.len(),
            r,
            failures
                .iter()
                .take(8)
                .cloned()
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let mut warnings = Vec::new();
    let sd = |v: &[f64], warnings: &mut Vec<String>| {
        if v.len() < 2 {
            warnings.push(
                "dispersion undefined with fewer than 2 successful replications"
                    .to_string(),
            );
            None
        } else {
            population_sd(v)
        }
    };
    let rmse = if ames.is_empty() {
        None
    } else {
        Some(
            (ames.iter().map(|a| (a - true_ame).powi(2)).sum::<f64>() / ames.len() as f64)
                .sqrt(),
        )
    };
    let beta_sd = sd(&betas, &mut warnings);
    let ame_sd = sd(&ames, &mut warnings);
    warnings.dedup();
    failures.truncate(10);
    Ok(EstimatorSummary {
        estimator,
        n_success: betas.len(),
        n_failed: r - betas.len(),
        true_beta,
        beta_mean: mean(&betas),
        beta_sd,
        true_ame,
        ame_mean: mean(&ames),
        ame_sd,
        ame_rmse: rmse,
        failures,
        warnings,
    })
}

/// Run the full experiment: simulate `R` panels, fit the requested
/// estimators, run the requested tests, and aggregate. Replications run in
/// parallel on derived seeds, so the result is deterministic given the
/// configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let dgp = config.dgp.resolve()?;
    if config.r < 1 {
        return Err(Error::invalid("need at least one replication".into()));
    }
    let mut warnings = Vec::new();

    // Canonical estimator order, deduplicated.
    let mut estimators: Vec<EstimatorKind> = [
        EstimatorKind::FeCml,
        EstimatorKind::NoUhMle,
        EstimatorKind::ReMle,
    ]
    .into_iter()
    .filter(|e| config.estimators.contains(e))
    .collect();
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators requested".into()));
    }
    if !dgp.has_heterogeneity() && estimators.contains(&EstimatorKind::ReMle) {
        estimators.retain(|e| *e != EstimatorKind::ReMle);
        warnings.push(
            "RE-MLE skipped: the two-point mixture is not identified under a \
             no-heterogeneity DGP"
                .to_string(),
        );
        if estimators.is_empty() {
            return Err(Error::invalid(
                "only RE-MLE was requested, and it is skipped under a \
                 no-heterogeneity DGP"
                    .into(),
            ));
        }
    }

    let mut tests: Vec<HausmanTest> = [HausmanTest::Beta, HausmanTest::Ame]
        .into_iter()
        .filter(|t| config.tests.contains(t))
        .collect();
    if !tests.is_empty() {
        if config.null_estimator == EstimatorKind::FeCml {
            return Err(Error::invalid(
                "the null estimator must be NoUH-MLE or RE-MLE".into(),
            ));
        }
        if !estimators.contains(&EstimatorKind::FeCml) {
            return Err(Error::invalid(
                "specification tests require the FE-CMLE estimator".into(),
            ));
        }
        if !estimators.contains(&config.null_estimator) {
            return Err(Error::invalid(format!(
                "specification tests require the null estimator {} to be fit \
                 (it may have been skipped under this DGP)",
                config.null_estimator.token()
            )));
        }
        if tests.contains(&HausmanTest::Ame) && config.bootstrap_b < 2 {
            return Err(Error::invalid(
                "HS_AME needs at least 2 bootstrap replicates".into(),
            ));
        }
    } else {
        tests.clear();
    }

    let true_beta = dgp.beta;
    let true_ame = dgp.true_ame1()?;

    let outcomes: Vec<RepOutcome> = (0..config.r)
        .into_par_iter()
        .map(|rep| {
            run_one_replication(
                &dgp,
                config.n,
                config.t,
                rep,
                config.seed,
                &estimators,
                &tests,
                config.null_estimator,
                config.bootstrap_b,
            )
        })
        .collect();

    let estimator_summaries = estimators
        .iter()
        .map(|&e| summarize_estimator(e, &outcomes, true_beta, true_ame, config.r))
        .collect::<Result<Vec<_>>>()?;

    let mut test_summaries = Vec::new();
    for &test in &tests {
        let mut p_values = Vec::new();
        let mut n_invalid = 0usize;
        let mut failures = Vec::new();
        for (rep, outcome) in outcomes.iter().enumerate() {
            match outcome.tests.get(&test) {
                Some(Ok(Some(p))) => p_values.push(*p),
                Some(Ok(None)) => n_invalid += 1,
                Some(Err(e)) => failures.push(format!("replication {rep}: {e}")),
                None => failures.push(format!("replication {rep}: not run")),
            }
        }
        p_values.sort_by(f64::total_cmp);
        let n_valid = p_values.len();
        let rejection_rate_5pct = if n_valid + n_invalid > 0 {
            let against_null = p_values.iter().filter(|p| **p < 0.05).count() + n_invalid;
            Some(against_null as f64 / (n_valid + n_invalid) as f64)
        } else {
            None
        };
        let n_failed = failures.len();
        failures.truncate(10);
        test_summaries.push(TestSummary {
            test,
            null_estimator: config.null_estimator,
            p_values,
            n_valid,
            n_invalid,
            n_failed,
            rejection_rate_5pct,
            failures,
        });
    }

    Ok(ExperimentResult {
        dgp,
        n: config.n,
        t: config.t,
        r: config.r,
        seed: config.seed,
        bootstrap_b: config.bootstrap_b,
        estimators: estimator_summaries,
        tests: test_summaries,
        warnings,
    })
}

/// Sorted (p, empirical CDF) pairs for one test — step-function data for
/// external plotting.
pub fn pvalue_cdf(result: &ExperimentResult, test: HausmanTest) -> Result<Vec<(f64, f64)>> {
    let summary = result
        .tests
        .iter()
        .find(|s| s.test == test)
        .ok_or_else(|| {
            Error::invalid(format!("test {} was not run", test.token()))
        })?;
    let n = summary.p_values.len();
    Ok(summary
        .p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, (i + 1) as f64 / n as f64))
        .collect())
}

/// Render the per-estimator aggregates as CSV with the canonical column
/// layout (true slope, slope mean/sd, true effect, effect mean/sd/RMSE).
pub fn csv_table(result: &ExperimentResult) -> String {
    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut out = String::from(
        "dgp,estimator,true_beta,mean_beta,std_beta,true_ame,mean_ame,std_ame,rmse_ame\n",
    );
    for s in &result.estimators {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{:.6},{},{},{}\n",
            result.dgp.label,
            s.estimator.token(),
            s.true_beta,
            fmt(s.beta_mean),
            fmt(s.beta_sd),
            s.true_ame,
            fmt(s.ame_mean),
            fmt(s.ame_sd),
            fmt(s.ame_rmse),
        ));
    }
    out
}
