//! Bootstrap standard errors and Hausman specification tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::numeric::sample_sd;
use crate::panel::Panel;
use crate::rng::stream_rng;

/// Bootstrap output: the standard error plus the replicate values it was
/// computed from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// Sample standard deviation of the successful replicate statistics.
    pub se: f64,
    /// Successful replicate values, in replicate-index order.
    pub replicates: Vec<f64>,
    /// Number of replicates whose statistic failed.
    pub n_failures: usize,
    /// Messages from failed replicates (replicate index included).
    pub failures: Vec<String>,
}

/// Nonparametric bootstrap over individuals: each replicate resamples the
/// `N` full original histories with replacement and re-applies `statistic`
/// (which performs any sub-history splitting itself). Replicate `r` draws
/// from the dedicated stream `(seed, r)`, so results are independent of
/// scheduling and parallelism.
///
/// Fails if more than 5% of replicates error.
pub fn bootstrap_se<F>(
    panel: &Panel,
    statistic: F,
    n_replicates: usize,
    seed: u64,
) -> Result<BootstrapSummary>
where
    F: Fn(&Panel) -> Result<f64> + Sync,
{
    if n_replicates < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 bootstrap replicates, got {n_replicates}"
        )));
    }
    let individuals = panel.individuals();
    let n = individuals.len();
    if n == 0 {
        return Err(Error::data("cannot bootstrap an empty panel".into()));
    }
    let num_alternatives = panel.num_alternatives();

    let outcomes: Vec<Result<f64>> = (0..n_replicates)
        .into_par_iter()
        .map(|r| {
            use rand::Rng;
            let mut rng = stream_rng(seed, r as u64);
            let resampled: Vec<_> = (0..n)
                .map(|_| individuals[rng.random_range(0..n)].clone())
                .collect();
            let replicate = Panel::new(resampled, num_alternatives)?;
            statistic(&replicate)
        })
        .collect();

    let mut replicates = Vec::with_capacity(n_replicates);
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) if v.is_finite() => replicates.push(v),
            Ok(v) => failures.push(format!("replicate {r}: non-finite statistic {v}")),
            Err(e) => failures.push(format!("replicate {r}: {e}")),
        }
    }
    if failures.len() as f64 > 0.05 * n_replicates as f64 {
        let shown = failures
            .iter()
            .take(8)
            .cloned()
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::computation(format!(
            "bootstrap statistic failed on {} of {} replicates (> 5%): {shown}",
            failures.len(),
            n_replicates
        )));
    }
    let se = sample_sd(&replicates).ok_or_else(|| {
        Error::computation("too few successful replicates to form a standard error".into())
    })?;
    Ok(BootstrapSummary {
        se,
        n_failures: failures.len(),
        replicates,
        failures,
    })
}

/// Which estimate pair a Hausman test compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HausmanKind {
    /// Slope comparison.
    Beta,
    /// Average-marginal-effect comparison.
    Ame,
}

impl HausmanKind {
    /// Stable token used in serialized output.
    pub fn token(&self) -> &'static str {
        match self {
            HausmanKind::Beta => "BETA",
            HausmanKind::Ame => "AME",
        }
    }

    /// Parse a serialized token.
    pub fn from_token(token: &str) -> Result<Self> {
        match token {
            "BETA" => Ok(HausmanKind::Beta),
            "AME" => Ok(HausmanKind::Ame),
            other => Err(Error::invalid(format!(
                "unknown Hausman kind '{other}' (expected BETA or AME)"
            ))),
        }
    }
}

impl Serialize for HausmanKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for HausmanKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let token = String::deserialize(d)?;
        HausmanKind::from_token(&token).map_err(serde::de::Error::custom)
    }
}

/// Outcome of a Hausman comparison of a consistent estimator against an
/// efficient-under-the-null one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HausmanResult {
    /// Which quantity was compared.
    pub kind: HausmanKind,
    /// (difference)² / (Var_consistent − Var_efficient); absent when the
    /// variance difference is nonpositive.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub statistic: Option<f64>,
    /// Upper-tail χ²(1) probability of `statistic`; absent when invalid.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
    /// The variance difference forming the denominator.
    pub denominator: f64,
    /// False when the denominator is nonpositive — a finite-sample failure
    /// of the variance ordering, not a model rejection.
    pub valid: bool,
}

/// Upper tail of the χ²(1) distribution.
pub fn chi_square_1_upper_tail(statistic: f64) -> f64 {
    erfc((statistic / 2.0).sqrt())
}

/// Hausman statistic from two (value, variance) pairs: the first from the
/// estimator that stays consistent under misspecification, the second from
/// the one that is efficient under the null.
pub fn hausman(
    consistent: (f64, f64),
    efficient: (f64, f64),
    kind: HausmanKind,
) -> Result<HausmanResult> {
    for (label, (value, variance)) in
        [("consistent", consistent), ("efficient", efficient)]
    {
        if !value.is_finite() || !variance.is_finite() {
            return Err(Error::invalid(format!(
                "{label} estimate must be finite, got value {value}, variance {variance}"
            )));
        }
        if variance < 0.0 {
            return Err(Error::invalid(format!(
                "{label} variance must be nonnegative, got {variance}"
            )));
        }
    }
    let denominator = consistent.1 - efficient.1;
    if denominator <= 0.0 {
        return Ok(HausmanResult {
            kind,
            statistic: None,
            p_value: None,
            denominator,
            valid: false,
        });
    }
    let diff = consistent.0 - efficient.0;
    let statistic = diff * diff / denominator;
    Ok(HausmanResult {
        kind,
        statistic: Some(statistic),
        p_value: Some(chi_square_1_upper_tail(statistic)),
        denominator,
        valid: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::Individual;
    use approx::assert_relative_eq;

    fn two_state_panel(n: usize, seed: u64) -> Panel {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let individuals = (0..n)
            .map(|i| {
                let b = u8::from(rng.random_range(0.0..1.0) < 0.5);
                Individual {
                    id: i.to_string(),
                    y: vec![b, b],
                    x: None,
                    d1: None,
                }
            })
            .collect();
        Panel::new(individuals, 2).unwrap()
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let panel = two_state_panel(50, 3);
        let out = bootstrap_se(&panel, |_| Ok(42.0), 25, 7).unwrap();
        assert_eq!(out.se, 0.0);
        assert_eq!(out.replicates.len(), 25);
        assert_eq!(out.n_failures, 0);
    }

    #[test]
    fn bernoulli_mean_se_matches_theory() {
        let panel = two_state_panel(1000, 11);
        let statistic = |p: &Panel| {
            let mean = p
                .individuals()
                .iter()
                .map(|ind| f64::from(ind.y[0]))
                .sum::<f64>()
                / p.individuals().len() as f64;
            Ok(mean)
        };
        let out = bootstrap_se(&panel, statistic, 1000, 5).unwrap();
        let theory = (0.25f64 / 1000.0).sqrt();
        assert!(
            (out.se - theory).abs() < 0.2 * theory,
            "se {} vs theory {theory}",
            out.se
        );
    }

    #[test]
    fn same_seed_gives_identical_replicates() {
        let panel = two_state_panel(40, 19);
        let statistic = |p: &Panel| {
            Ok(p.individuals()
                .iter()
                .map(|ind| f64::from(ind.y[0]))
                .sum::<f64>())
        };
        let a = bootstrap_se(&panel, statistic, 30, 123).unwrap();
        let b = bootstrap_se(&panel, statistic, 30, 123).unwrap();
        assert_eq!(a.replicates, b.replicates);
        let c = bootstrap_se(&panel, statistic, 30, 124).unwrap();
        assert_ne!(a.replicates, c.replicates);
    }

    #[test]
    fn excess_failures_error_carries_a_log() {
        let panel = two_state_panel(10, 2);
        let err = bootstrap_se(
            &panel,
            |_| Err(Error::computation("boom".into())),
            20,
            1,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("boom"), "{msg}");
        assert!(msg.contains("20 of 20") || msg.contains("20 replicates"), "{msg}");
    }

    #[test]
    fn identical_estimates_give_statistic_zero_p_one() {
        let r = hausman((0.5, 0.03), (0.5, 0.01), HausmanKind::Beta).unwrap();
        assert!(r.valid);
        assert_eq!(r.statistic, Some(0.0));
        assert_relative_eq!(r.p_value.unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn textbook_values() {
        let r = hausman((0.6, 0.02), (0.5, 0.01), HausmanKind::Ame).unwrap();
        assert!(r.valid);
        assert_relative_eq!(r.statistic.unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.p_value.unwrap(), 0.3173105078629141, epsilon = 1e-12);
        assert_relative_eq!(r.denominator, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn wrong_variance_ordering_is_flagged_not_fatal() {
        let r = hausman((0.6, 0.01), (0.5, 0.02), HausmanKind::Beta).unwrap();
        assert!(!r.valid);
        assert!(r.statistic.is_none());
        assert!(r.p_value.is_none());
        assert!(r.denominator < 0.0);
    }

    #[test]
    fn negative_variance_is_an_error() {
        assert!(hausman((0.5, -0.01), (0.4, 0.01), HausmanKind::Beta).is_err());
        assert!(hausman((0.5, 0.01), (0.4, f64::NAN), HausmanKind::Beta).is_err());
    }

    #[test]
    fn p_value_is_monotone_in_statistic() {
        let ps: Vec<f64> = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&s| chi_square_1_upper_tail(s))
            .collect();
        for pair in ps.windows(2) {
            assert!(pair[0] > pair[1]);
        }
        assert!(ps.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn kind_tokens_round_trip() {
        for kind in [HausmanKind::Beta, HausmanKind::Ame] {
            assert_eq!(HausmanKind::from_token(kind.token()).unwrap(), kind);
        }
        assert!(HausmanKind::from_token("SLOPE").is_err());
    }
}
