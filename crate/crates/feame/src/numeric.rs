//! Numerically stable logistic/softmax primitives used throughout the crate.

/// Logistic function Λ(u) = e^u / (1 + e^u), stable over the whole real line.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^u) without overflow for large |u|.
pub fn log1pexp(u: f64) -> f64 {
    // Thresholds follow the standard piecewise evaluation: below -37 the
    // result is e^u to machine precision, above 33 it is u itself.
    if u <= -37.0 {
        u.exp()
    } else if u <= 18.0 {
        u.exp().ln_1p()
    } else if u <= 33.3 {
        u + (-u).exp()
    } else {
        u
    }
}

/// log Λ(u) = −log(1 + e^{−u}), stable for |u| > 30.
pub fn log_logistic(u: f64) -> f64 {
    -log1pexp(-u)
}

/// log Σ e^{x_i} with the usual max shift; returns −∞ for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Softmax of a utility vector; sums to 1 up to rounding.
pub fn softmax(utilities: &[f64]) -> Vec<f64> {
    let m = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = utilities.iter().map(|&u| (u - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Sample standard deviation (n−1 divisor); `None` for fewer than 2 values.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

/// Population standard deviation (n divisor); `None` for an empty slice.
pub fn population_sd(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / n).sqrt())
}
