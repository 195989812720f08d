//! Shared oracle for the integration suites.
//!
//! Everything here is computed from first principles — hand-rolled logistic
//! and softmax transitions, explicit forward products over enumerated
//! histories, and direct finite sums over heterogeneity mass points. None of
//! it calls the library's model, weight, or estimator code, so agreement
//! between these values and the library is evidence, not tautology.
//!
//! A deliberate twist: every population distribution built here draws the
//! first window period from [`arbitrary_q`] (or its multinomial sibling), a
//! law that is *not* the model's own marginal and varies with α. The
//! identification results the estimators implement hold conditional on the
//! first-period choice, so the plug-in values must be invariant to this
//! choice of law; building the populations this way tests that invariance
//! for free.

#![allow(dead_code)] // each test binary uses its own subset

use feame::panel::{HistoryDistribution, Individual, Panel};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Hand-rolled logistic CDF.
pub fn sigma(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// All J-ary histories of length `t`, counting in base J.
pub fn histories(j: usize, t: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(j.pow(t as u32));
    let mut y = vec![0u8; t];
    loop {
        out.push(y.clone());
        let mut pos = t;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            if usize::from(y[pos]) + 1 < j {
                y[pos] += 1;
                break;
            }
            y[pos] = 0;
        }
    }
}

/// An α-dependent first-period law that is deliberately not the model's own
/// marginal (see module docs).
pub fn arbitrary_q(alpha: f64) -> f64 {
    0.3 + 0.4 * sigma(0.7 * alpha - 0.2)
}

// ---------------------------------------------------------------------------
// Binary lag model: P(y_t = 1 | y_{t-1}) = σ(α + β·y_{t-1})
// ---------------------------------------------------------------------------

/// Probability of a window given α, with first-period law `q1 = P(y_1 = 1)`.
pub fn lag_window_prob(y: &[u8], alpha: f64, beta: f64, q1: f64) -> f64 {
    let mut p = if y[0] == 1 { q1 } else { 1.0 - q1 };
    for t in 1..y.len() {
        let s = sigma(alpha + beta * f64::from(y[t - 1]));
        p *= if y[t] == 1 { s } else { 1.0 - s };
    }
    p
}

/// Exact t-period window distribution under a finite α mixture
/// `points = [(α, share), …]`.
pub fn lag_population(points: &[(f64, f64)], beta: f64, t: usize) -> HistoryDistribution {
    let parts: Vec<_> = histories(2, t)
        .into_iter()
        .map(|y| {
            let p = points
                .iter()
                .map(|&(a, w)| w * lag_window_prob(&y, a, beta, arbitrary_q(a)))
                .sum::<f64>();
            (y, None, p)
        })
        .collect();
    HistoryDistribution::from_parts(t, parts, 1).expect("oracle probabilities sum to 1")
}

/// Directly integrated one-period effect `E[σ(α+β) − σ(α)]`.
pub fn true_ame1(points: &[(f64, f64)], beta: f64) -> f64 {
    points
        .iter()
        .map(|&(a, w)| w * (sigma(a + beta) - sigma(a)))
        .sum()
}

/// Directly integrated n-period effect `E[(σ(α+β) − σ(α))^n]`.
pub fn true_ame_n(points: &[(f64, f64)], beta: f64, n: usize) -> f64 {
    points
        .iter()
        .map(|&(a, w)| w * (sigma(a + beta) - sigma(a)).powi(n as i32))
        .sum()
}

/// Directly integrated own-transition probability `E[σ(α+β)]`.
pub fn true_pi_11(points: &[(f64, f64)], beta: f64) -> f64 {
    points.iter().map(|&(a, w)| w * sigma(a + beta)).sum()
}

// ---------------------------------------------------------------------------
// Binary lag model with exogenous covariates:
// P(y_t = 1 | y_{t-1}, x_t) = σ(α + β·y_{t-1} + γ'x_t)
// ---------------------------------------------------------------------------

/// Window probability with one scalar covariate per period.
pub fn lag_x_window_prob(
    y: &[u8],
    xs: &[f64],
    alpha: f64,
    beta: f64,
    gamma: f64,
    q1: f64,
) -> f64 {
    let mut p = if y[0] == 1 { q1 } else { 1.0 - q1 };
    for t in 1..y.len() {
        let s = sigma(alpha + beta * f64::from(y[t - 1]) + gamma * xs[t]);
        p *= if y[t] == 1 { s } else { 1.0 - s };
    }
    p
}

/// All length-`t` paths of an iid two-valued covariate with their
/// probabilities: `x_t = values[1]` with probability `p_hi`.
pub fn x_paths(values: [f64; 2], p_hi: f64, t: usize) -> Vec<(Vec<f64>, f64)> {
    histories(2, t)
        .into_iter()
        .map(|bits| {
            let path: Vec<f64> = bits.iter().map(|&b| values[usize::from(b)]).collect();
            let prob = bits
                .iter()
                .map(|&b| if b == 1 { p_hi } else { 1.0 - p_hi })
                .product();
            (path, prob)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Binary duration model (cap 2): from state 0 the hazard is σ(α); from state
// 1 with current spell length d it is σ(α + b[min(d,2) − 1]).
// ---------------------------------------------------------------------------

/// Probability of a window that starts at a spell boundary (the period-1
/// choice begins a fresh spell), with first-period law `q1`.
pub fn duration_window_prob(y: &[u8], alpha: f64, b: [f64; 2], q1: f64) -> f64 {
    let mut p = if y[0] == 1 { q1 } else { 1.0 - q1 };
    let mut run = 1usize;
    for t in 1..y.len() {
        let u = if y[t - 1] == 1 {
            alpha + b[run.min(2) - 1]
        } else {
            alpha
        };
        let s = sigma(u);
        p *= if y[t] == 1 { s } else { 1.0 - s };
        run = if y[t] == y[t - 1] { run + 1 } else { 1 };
    }
    p
}

/// Exact 4-period boundary-window distribution under a finite α mixture.
pub fn duration_population(points: &[(f64, f64)], b: [f64; 2]) -> HistoryDistribution {
    let parts: Vec<_> = histories(2, 4)
        .into_iter()
        .map(|y| {
            let p = points
                .iter()
                .map(|&(a, w)| w * duration_window_prob(&y, a, b, arbitrary_q(a)))
                .sum::<f64>();
            (y, None, p)
        })
        .collect();
    HistoryDistribution::from_parts(4, parts, 1).expect("oracle probabilities sum to 1")
}

/// Directly integrated duration effect `E[σ(α + shift_to) − σ(α + shift_from)]`
/// where a shift of 0.0 means the no-spell hazard.
pub fn true_duration_effect(
    points: &[(f64, f64)],
    shift_from: f64,
    shift_to: f64,
) -> f64 {
    points
        .iter()
        .map(|&(a, w)| w * (sigma(a + shift_to) - sigma(a + shift_from)))
        .sum()
}

// ---------------------------------------------------------------------------
// Multinomial diagonal-habit model: utilities u_0 = 0,
// u_j = α_j + β_j·1{y_{t-1} = j} for j ≥ 1; softmax choice.
// ---------------------------------------------------------------------------

/// Hand-rolled transition probability P(y_t = l | y_{t-1} = k).
pub fn mnl_transition(l: u8, k: u8, alpha: &[f64], betas: &[f64]) -> f64 {
    let m = alpha.len() + 1;
    let mut u = vec![0.0; m];
    for j in 1..m {
        u[j] = alpha[j - 1] + if usize::from(k) == j { betas[j - 1] } else { 0.0 };
    }
    let mx = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = u.iter().map(|v| (v - mx).exp()).collect();
    exps[usize::from(l)] / exps.iter().sum::<f64>()
}

/// An α-dependent first-period simplex that is not the model's marginal.
pub fn arbitrary_q_mnl(alpha: &[f64]) -> Vec<f64> {
    let m = alpha.len() + 1;
    let mut u = vec![0.1];
    for (j, &a) in alpha.iter().enumerate() {
        u.push(0.25 * (j as f64) - 0.3 + 0.4 * (a).tanh());
    }
    debug_assert_eq!(u.len(), m);
    let mx = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = u.iter().map(|v| (v - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Window probability for the multinomial model with first-period law `q`.
pub fn mnl_window_prob(y: &[u8], alpha: &[f64], betas: &[f64], q: &[f64]) -> f64 {
    let mut p = q[usize::from(y[0])];
    for t in 1..y.len() {
        p *= mnl_transition(y[t], y[t - 1], alpha, betas);
    }
    p
}

/// Exact t-period window distribution under a finite mixture of α vectors.
pub fn mnl_population(
    points: &[(Vec<f64>, f64)],
    betas: &[f64],
    t: usize,
) -> HistoryDistribution {
    let m = points[0].0.len() + 1;
    let parts: Vec<_> = histories(m, t)
        .into_iter()
        .map(|y| {
            let p = points
                .iter()
                .map(|(a, w)| w * mnl_window_prob(&y, a, betas, &arbitrary_q_mnl(a)))
                .sum::<f64>();
            (y, None, p)
        })
        .collect();
    HistoryDistribution::from_parts(t, parts, 1).expect("oracle probabilities sum to 1")
}

/// Directly integrated own-transition probability `E[P(j → j | α)]`.
pub fn true_pi_jj_mnl(points: &[(Vec<f64>, f64)], betas: &[f64], j: u8) -> f64 {
    points
        .iter()
        .map(|(a, w)| w * mnl_transition(j, j, a, betas))
        .sum()
}

// ---------------------------------------------------------------------------
// Synthetic multinomial panel (the library's simulator covers the binary lag
// model only, so end-to-end multinomial runs simulate here).
// ---------------------------------------------------------------------------

/// Simulate a diagonal-habit panel: α drawn from the finite mixture, the
/// first period from the no-habit softmax given α, transitions from the
/// model. Deterministic in `seed`.
pub fn simulate_mnl_panel(
    points: &[(Vec<f64>, f64)],
    betas: &[f64],
    n: usize,
    t: usize,
    seed: u64,
) -> Panel {
    let m = points[0].0.len() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = WeightedIndex::new(points.iter().map(|(_, w)| *w)).expect("valid mixture");
    let zero = vec![0.0; m - 1];
    let mut individuals = Vec::with_capacity(n);
    for i in 0..n {
        let alpha = &points[mix.sample(&mut rng)].0;
        let start: Vec<f64> = (0..m)
            .map(|l| mnl_transition(l as u8, 0, alpha, &zero))
            .collect();
        let mut y = Vec::with_capacity(t);
        y.push(sample_index(&start, &mut rng));
        for _ in 1..t {
            let prev = *y.last().expect("non-empty history");
            let probs: Vec<f64> = (0..m)
                .map(|l| mnl_transition(l as u8, prev, alpha, betas))
                .collect();
            y.push(sample_index(&probs, &mut rng));
        }
        individuals.push(Individual {
            id: format!("i{i}"),
            y,
            x: None,
            d1: None,
        });
    }
    Panel::new(individuals, m).expect("simulated panel is valid")
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> u8 {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return j as u8;
        }
    }
    (probs.len() - 1) as u8
}

// ---------------------------------------------------------------------------
// Standard mixtures shared across suites.
// ---------------------------------------------------------------------------

/// Two-point α mixture used by the binary oracles.
pub const ALPHA_MIX: [(f64, f64); 2] = [(-1.1, 0.35), (0.4, 0.65)];

/// Three-point α mixture for sharper over-identification checks.
pub const ALPHA_MIX3: [(f64, f64); 3] = [(-2.0, 0.25), (-0.3, 0.4), (1.2, 0.35)];

/// Two-point mixture over 2-vector intercepts for the 3-alternative oracle.
pub fn alpha_mix_mnl3() -> Vec<(Vec<f64>, f64)> {
    vec![
        (vec![-0.5, 0.3], 0.4),
        (vec![0.8, -0.2], 0.6),
    ]
}
