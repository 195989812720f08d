//! Conditional maximum likelihood for the slope parameters.
//!
//! Conditioning on the sufficient-statistic classes of [`crate::model`]
//! removes the per-individual heterogeneity (and the initial condition)
//! from the likelihood: within a class, history probabilities are a softmax
//! of `c(y)'θ` over the class members. The resulting objective is globally
//! concave in θ, so a damped Newton iteration with an Armijo line search
//! converges from any starting point whenever θ is identified.
//!
//! The data enter only through per-history counts, so panels are collapsed
//! once ([`collapse_panel`]) and can be cheaply re-weighted for count-level
//! bootstrap resampling ([`CollapsedPanel::with_observation_weights`]).

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sufficiency_classes, ModelKind, ModelSpec, Theta};
use crate::numeric::logsumexp;
use crate::panel::{x_bits, Panel};

/// One sufficiency class retained for estimation: the statistics of every
/// member history (observed or not), plus whether those statistics vary.
#[derive(Debug, Clone)]
struct ClassData {
    member_stats: Vec<Vec<f64>>,
    informative: bool,
}

/// A panel reduced to the quantities the conditional likelihood needs:
/// per observed history, its class, its statistics, and its weight.
#[derive(Debug, Clone)]
pub struct CollapsedPanel {
    spec: ModelSpec,
    window_length: usize,
    classes: Vec<ClassData>,
    /// (class index, statistics of the observed history, weight).
    observations: Vec<(usize, Vec<f64>, f64)>,
    n_individuals: f64,
}

impl CollapsedPanel {
    /// Collapse weighted histories sharing a window length. Each item is
    /// `(history, covariates, initial duration, weight)`. Weights need not
    /// be integers (population distributions are valid inputs).
    pub fn from_weighted_histories<I>(spec: &ModelSpec, items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u8>, Option<Vec<Vec<f64>>>, u32, f64)>,
    {
        spec.validate()?;
        // Group counts by (covariate pattern, effective initial duration);
        // the class partition is context-specific for those two inputs.
        type ContextKey = (Option<Vec<u64>>, u32);
        let mut contexts: BTreeMap<ContextKey, BTreeMap<Vec<u8>, f64>> = BTreeMap::new();
        let mut x_of_context: HashMap<Option<Vec<u64>>, Option<Vec<Vec<f64>>>> = HashMap::new();
        let mut window_length = None;
        let mut n_individuals = 0.0;
        for (y, x, d1, weight) in items {
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::data(format!("invalid history weight {weight}")));
            }
            if y.len() < 2 {
                return Err(Error::data("histories must have at least 2 periods".into()));
            }
            match window_length {
                None => window_length = Some(y.len()),
                Some(t) if t != y.len() => {
                    return Err(Error::data(format!(
                        "histories have mixed lengths ({t} vs {}); split or window the \
                         panel to a common length first",
                        y.len()
                    )));
                }
                _ => {}
            }
            if y.iter().any(|&c| usize::from(c) >= spec.num_alternatives) {
                return Err(Error::data(format!(
                    "choice value out of range for a model with {} alternatives",
                    spec.num_alternatives
                )));
            }
            let needs_x = spec.kind == ModelKind::BinaryLagExog;
            if needs_x && x.is_none() {
                return Err(Error::data(
                    "the covariate model requires covariate histories".into(),
                ));
            }
            let x = if needs_x { x } else { None };
            let x_key = x.as_deref().map(x_bits);
            // Durations beyond the cap are equivalent; ignore d1 entirely
            // when it cannot enter the likelihood.
            let eff_d1 = if spec.kind == ModelKind::BinaryDuration && y[0] == 1 {
                d1.min(spec.max_duration as u32 - 1)
            } else {
                0
            };
            x_of_context.entry(x_key.clone()).or_insert(x);
            n_individuals += weight;
            *contexts
                .entry((x_key, eff_d1))
                .or_default()
                .entry(y)
                .or_insert(0.0) += weight;
        }
        let window_length =
            window_length.ok_or_else(|| Error::data("no histories to collapse".into()))?;

        let mut classes = Vec::new();
        let mut observations = Vec::new();
        for ((x_key, d1), counts) in &contexts {
            let x = x_of_context[x_key].clone();
            let partition = sufficiency_classes(spec, window_length, *d1, x.as_deref())?;
            let mut lookup: HashMap<Vec<u8>, (usize, usize)> = HashMap::new();
            let base = classes.len();
            for (ci, class) in partition.iter().enumerate() {
                for (mi, member) in class.members.iter().enumerate() {
                    lookup.insert(member.clone(), (base + ci, mi));
                }
            }
            for class in partition {
                let first = &class.stats[0];
                let informative = class.stats.iter().any(|s| s != first);
                classes.push(ClassData {
                    member_stats: class.stats,
                    informative,
                });
            }
            for (y, &weight) in counts {
                let &(ci, mi) = lookup
                    .get(y.as_slice())
                    .expect("every enumerated history belongs to a class");
                observations.push((ci, classes[ci].member_stats[mi].clone(), weight));
            }
        }
        Ok(CollapsedPanel {
            spec: *spec,
            window_length,
            classes,
            observations,
            n_individuals,
        })
    }

    /// The model this collapse was built for.
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Common history length.
    pub fn window_length(&self) -> usize {
        self.window_length
    }

    /// Total weight (number of individuals for unit-weight panels).
    pub fn n_individuals(&self) -> f64 {
        self.n_individuals
    }

    /// Number of distinct observed histories (granularity of
    /// [`Self::with_observation_weights`]).
    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    /// Current weight of each distinct observed history.
    pub fn observation_weights(&self) -> Vec<f64> {
        self.observations.iter().map(|(_, _, w)| *w).collect()
    }

    /// Clone with replaced observation weights (for count-level
    /// resampling). Length must match [`Self::n_observations`].
    pub fn with_observation_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.observations.len() {
            return Err(Error::invalid(format!(
                "expected {} weights, got {}",
                self.observations.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and nonnegative".into()));
        }
        let mut out = self.clone();
        for (slot, &w) in out.observations.iter_mut().zip(weights) {
            slot.2 = w;
        }
        out.n_individuals = weights.iter().sum();
        Ok(out)
    }

    /// Number of classes that are informative about θ (their statistics
    /// vary across members) and carry positive observed weight.
    pub fn n_classes_informative(&self) -> usize {
        let mut weight_in_class = vec![0.0; self.classes.len()];
        for (ci, _, w) in &self.observations {
            weight_in_class[*ci] += w;
        }
        self.classes
            .iter()
            .zip(&weight_in_class)
            .filter(|(c, &w)| c.informative && w > 0.0)
            .count()
    }

    /// For each parameter, whether any positively-weighted class shows
    /// within-class variation in the matching statistic.
    fn identified_coordinates(&self) -> Vec<bool> {
        let dim = self.spec.num_params();
        let mut weight_in_class = vec![0.0; self.classes.len()];
        for (ci, _, w) in &self.observations {
            weight_in_class[*ci] += w;
        }
        let mut identified = vec![false; dim];
        for (class, &w) in self.classes.iter().zip(&weight_in_class) {
            if w <= 0.0 || !class.informative {
                continue;
            }
            let first = &class.member_stats[0];
            for stats in &class.member_stats[1..] {
                for k in 0..dim {
                    if stats[k] != first[k] {
                        identified[k] = true;
                    }
                }
            }
        }
        identified
    }
}

/// Collapse a panel of equal-length histories for conditional estimation.
pub fn collapse_panel(panel: &Panel, spec: &ModelSpec) -> Result<CollapsedPanel> {
    if panel.num_alternatives() > spec.num_alternatives {
        return Err(Error::data(format!(
            "panel has {} alternatives but the model allows {}",
            panel.num_alternatives(),
            spec.num_alternatives
        )));
    }
    if spec.kind == ModelKind::BinaryLagExog {
        match panel.num_covariates() {
            Some(k) if k == spec.num_covariates => {}
            Some(k) => {
                return Err(Error::data(format!(
                    "panel has {k} covariates but the model expects {}",
                    spec.num_covariates
                )));
            }
            None => {
                return Err(Error::data(
                    "the covariate model requires covariate columns".into(),
                ));
            }
        }
    }
    CollapsedPanel::from_weighted_histories(
        spec,
        panel.individuals().iter().map(|ind| {
            (
                ind.y.clone(),
                ind.x.clone(),
                ind.d1.unwrap_or(0),
                1.0,
            )
        }),
    )
}

/// Value, gradient, and Hessian of the conditional log-likelihood at a flat
/// parameter vector.
pub fn conditional_log_likelihood(
    data: &CollapsedPanel,
    theta_flat: &[f64],
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let dim = data.spec.num_params();
    if theta_flat.len() != dim {
        return Err(Error::invalid(format!(
            "expected {dim} parameters, got {}",
            theta_flat.len()
        )));
    }
    // Class-level sufficient aggregates of the observations.
    let mut class_weight = vec![0.0; data.classes.len()];
    let mut class_stat_sum = vec![vec![0.0; dim]; data.classes.len()];
    for (ci, stats, w) in &data.observations {
        class_weight[*ci] += w;
        for k in 0..dim {
            class_stat_sum[*ci][k] += w * stats[k];
        }
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    let mut hess = vec![vec![0.0; dim]; dim];
    let mut scores = Vec::new();
    for (ci, class) in data.classes.iter().enumerate() {
        let w = class_weight[ci];
        if w <= 0.0 {
            continue;
        }
        scores.clear();
        scores.extend(class.member_stats.iter().map(|s| {
            s.iter()
                .zip(theta_flat)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        }));
        let lse = logsumexp(&scores);
        let probs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
        let mut mean = vec![0.0; dim];
        for (stats, p) in class.member_stats.iter().zip(&probs) {
            for k in 0..dim {
                mean[k] += p * stats[k];
            }
        }
        value -= w * lse;
        for k in 0..dim {
            value += class_stat_sum[ci][k] * theta_flat[k];
            grad[k] += class_stat_sum[ci][k] - w * mean[k];
        }
        for (stats, p) in class.member_stats.iter().zip(&probs) {
            for r in 0..dim {
                let dr = stats[r] - mean[r];
                for c in r..dim {
                    hess[r][c] -= w * p * dr * (stats[c] - mean[c]);
                }
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            hess[r][c] = hess[c][r];
        }
    }
    Ok((value, grad, hess))
}

/// Within-class membership probabilities at flat parameters: the softmax of
/// `c(y)'θ` over the class members.
pub fn class_membership_probabilities(member_stats: &[Vec<f64>], theta_flat: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = member_stats
        .iter()
        .map(|s| s.iter().zip(theta_flat).map(|(a, b)| a * b).sum())
        .collect();
    let lse = logsumexp(&scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

/// Tuning for the Newton solver.
#[derive(Debug, Clone)]
pub struct CmlOptions {
    /// Iteration cap before reporting non-convergence.
    pub max_iter: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub grad_tol: f64,
    /// Optional warm start (flat parameter order); zeros otherwise.
    pub init: Option<Vec<f64>>,
}

impl Default for CmlOptions {
    fn default() -> Self {
        CmlOptions {
            max_iter: 200,
            grad_tol: 1e-8,
            init: None,
        }
    }
}

/// A fitted conditional-likelihood estimate. `theta` is flat, aligned with
/// `param_names`; `covariance` is the inverse of the negative Hessian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaEstimate {
    /// The model that was fit.
    pub model: ModelSpec,
    /// Flat parameter names.
    pub param_names: Vec<String>,
    /// Flat parameter estimates.
    pub theta: Vec<f64>,
    /// Estimated covariance of `theta`.
    pub covariance: Vec<Vec<f64>>,
    /// Square roots of the covariance diagonal.
    pub std_errors: Vec<f64>,
    /// Conditional log-likelihood at the optimum.
    pub log_likelihood: f64,
    /// Total observation weight.
    pub n_individuals: f64,
    /// Informative classes with positive observed weight.
    pub n_classes_informative: usize,
    /// Whether the gradient criterion was met.
    pub converged: bool,
    /// Newton iterations used.
    pub iterations: usize,
    /// Final max-norm of the gradient.
    pub gradient_norm: f64,
    /// Non-fatal diagnostics.
    pub warnings: Vec<String>,
}

impl ThetaEstimate {
    /// The estimate as a structured parameter vector.
    pub fn theta_struct(&self) -> Result<Theta> {
        Theta::from_flat(&self.model, &self.theta)
    }
}

/// Maximize the conditional log-likelihood on collapsed data.
pub fn cml_fit(data: &CollapsedPanel, options: &CmlOptions) -> Result<ThetaEstimate> {
    let spec = data.spec;
    let dim = spec.num_params();
    let n_informative = data.n_classes_informative();
    if n_informative == 0 {
        return Err(Error::identification(
            "no informative equivalence classes: observed histories carry no \
             within-class variation (the binary lag model, for example, needs \
             window length ≥ 4 and both persistence patterns present)".to_string(),
        ));
    }
    let identified = data.identified_coordinates();
    if let Some(k) = identified.iter().position(|ok| !ok) {
        return Err(Error::identification(format!(
            "parameter '{}' has no within-class variation in the observed data",
            spec.param_names()[k]
        )));
    }

    let mut theta = match &options.init {
        Some(init) => {
            if init.len() != dim {
                return Err(Error::invalid(format!(
                    "warm start has {} parameters; model expects {dim}",
                    init.len()
                )));
            }
            init.clone()
        }
        None => vec![0.0; dim],
    };
    let (mut value, mut grad, mut hess) = conditional_log_likelihood(data, &theta)?;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..options.max_iter {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm < options.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let direction = newton_direction(&hess, &grad)?;
        let slope: f64 = direction.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if !(slope > 0.0) {
            return Err(Error::computation(
                "Newton direction is not an ascent direction".into(),
            ));
        }
        // When the predicted improvement ½·gᵀd sinks below the f64
        // resolution of the objective, a sufficient-decrease test can no
        // longer discriminate; take the full Newton step (the objective is
        // concave, so it is locally contracting) and let the gradient test
        // decide.
        let noise = 1e-12 * (1.0 + value.abs());
        let below_resolution = 0.5 * slope <= noise;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + step * d)
                .collect();
            let (v, g, h) = conditional_log_likelihood(data, &candidate)?;
            let sufficient = v >= value + 1e-4 * step * slope;
            if v.is_finite() && (sufficient || (below_resolution && v >= value - noise)) {
                theta = candidate;
                value = v;
                grad = g;
                hess = h;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::non_convergence(
                "line search failed to improve the conditional likelihood".into(),
            ));
        }
    }
    let gradient_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    if !converged && gradient_norm >= options.grad_tol {
        return Err(Error::non_convergence(format!(
            "no convergence after {} iterations (‖g‖∞ = {gradient_norm:.3e})",
            options.max_iter
        )));
    }

    let info = DMatrix::from_fn(dim, dim, |r, c| -hess[r][c]);
    let covariance = Cholesky::new(info.clone())
        .map(|ch| ch.inverse())
        .or_else(|| info.try_inverse())
        .ok_or_else(|| {
            Error::identification(
                "information matrix is singular at the optimum; parameters are \
                 not separately identified".to_string(),
            )
        })?;
    let cov: Vec<Vec<f64>> = (0..dim)
        .map(|r| (0..dim).map(|c| covariance[(r, c)]).collect())
        .collect();
    let std_errors = (0..dim).map(|k| cov[k][k].max(0.0).sqrt()).collect();
    let mut warnings = Vec::new();
    if theta.iter().any(|t| t.abs() > 15.0) {
        warnings.push(
            "parameter estimate exceeds 15 in magnitude; the conditional \
             likelihood may be nearly flat (quasi-separation)"
                .to_string(),
        );
    }
    Ok(ThetaEstimate {
        model: spec,
        param_names: spec.param_names(),
        theta,
        covariance: cov,
        std_errors,
        log_likelihood: value,
        n_individuals: data.n_individuals(),
        n_classes_informative: n_informative,
        converged: true,
        iterations,
        gradient_norm,
        warnings,
    })
}

/// Collapse and fit in one call.
pub fn cml_estimate(panel: &Panel, spec: &ModelSpec, options: &CmlOptions) -> Result<ThetaEstimate> {
    cml_fit(&collapse_panel(panel, spec)?, options)
}

/// Solve `(−H) d = g` for the Newton ascent direction. The negative Hessian
/// is positive semidefinite everywhere (the objective is concave), so a
/// Cholesky solve applies, with a tiny ridge retry near singularity.
fn newton_direction(hess: &[Vec<f64>], grad: &[f64]) -> Result<Vec<f64>> {
    let dim = grad.len();
    let g = DVector::from_column_slice(grad);
    let base = DMatrix::from_fn(dim, dim, |r, c| -hess[r][c]);
    for ridge in [0.0, 1e-10, 1e-6] {
        let mut m = base.clone();
        if ridge > 0.0 {
            let scale = base.diagonal().amax().max(1.0);
            for k in 0..dim {
                m[(k, k)] += ridge * scale;
            }
        }
        if let Some(ch) = Cholesky::new(m) {
            return Ok(ch.solve(&g).iter().copied().collect());
        }
    }
    Err(Error::identification(
        "curvature matrix is singular; a parameter is not identified by the \
         observed classes".to_string(),
    ))
}
