//! Standalone property suites: structural identities the estimators rely on,
//! checked over randomized parameters. Run with
//! `cargo test --test properties`.

mod common;

use approx::assert_relative_eq;
use common::{lag_population, true_ame1, ALPHA_MIX3};
use feame::inference::bootstrap_se;
use feame::likelihood::{
    collapse_panel, conditional_log_likelihood, CollapsedPanel, CmlOptions,
};
use feame::mc::{csv_table, run_experiment, simulate_panel, DgpInput, DgpSpec,
    EstimatorKind, ExperimentConfig};
use feame::model::{
    choice_prob, enumerate_histories, history_log_prob, sufficiency_classes, ModelSpec,
    Theta,
};
use feame::panel::Panel;
use feame::weights::{ame1_from_weights, solve_weights};
use nalgebra::DMatrix;
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// Odds-ratio identity: for any alternatives j ≠ k, j ≠ ℓ and any spell
// length, exp{β_kℓ − β_kj + β_jj − β_jℓ} equals the cross-ratio of
// transition probabilities — the heterogeneity cancels exactly.
// ---------------------------------------------------------------------------

fn cross_ratio(
    spec: &ModelSpec,
    theta: &Theta,
    alpha: &[f64],
    d: u32,
    j: u8,
    k: u8,
    l: u8,
) -> f64 {
    let p = |to: u8, from: u8| {
        choice_prob(to, from, d, None, alpha, theta, spec).expect("valid transition")
    };
    (p(l, k) * p(j, j)) / (p(j, k) * p(l, j))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn odds_ratio_identity_binary_lag(alpha in -3.0..3.0f64, beta in -2.0..2.0f64) {
        let spec = ModelSpec::binary_lag();
        let theta = Theta::binary(beta);
        // j = 1, k = 0, ℓ = 0: the only admissible triple in the binary model.
        let ratio = cross_ratio(&spec, &theta, &[alpha], 1, 1, 0, 0);
        prop_assert!((ratio.ln() - beta).abs() <= 1e-12 * (1.0 + beta.abs()));
    }

    #[test]
    fn odds_ratio_identity_duration(
        alpha in -3.0..3.0f64,
        b1 in -2.0..2.0f64,
        b2 in -2.0..2.0f64,
        d in 1u32..4,
    ) {
        let spec = ModelSpec::binary_duration(2);
        let theta = Theta::duration(vec![b1, b2]);
        let effective = if d >= 2 { b2 } else { b1 };
        let ratio = cross_ratio(&spec, &theta, &[alpha], d, 1, 0, 0);
        prop_assert!((ratio.ln() - effective).abs() <= 1e-12 * (1.0 + effective.abs()));
    }

    #[test]
    fn odds_ratio_identity_multinomial(
        a1 in -2.0..2.0f64,
        a2 in -2.0..2.0f64,
        a3 in -2.0..2.0f64,
        b1 in -1.5..1.5f64,
        b2 in -1.5..1.5f64,
        b3 in -1.5..1.5f64,
    ) {
        for m in [3usize, 4] {
            let spec = ModelSpec::multinomial_habit(m);
            let alpha = [a1, a2, a3][..m - 1].to_vec();
            let betas = [b1, b2, b3][..m - 1].to_vec();
            let theta = Theta::multinomial(betas.clone());
            let habit = |a: u8, b: u8| {
                if a == b && a >= 1 { betas[usize::from(a) - 1] } else { 0.0 }
            };
            for j in 0..m as u8 {
                for k in 0..m as u8 {
                    for l in 0..m as u8 {
                        if j == k || j == l {
                            continue;
                        }
                        let lhs = habit(k, l) - habit(k, j) + habit(j, j) - habit(j, l);
                        let ratio = cross_ratio(&spec, &theta, &alpha, 1, j, k, l);
                        prop_assert!(
                            (ratio.ln() - lhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                            "J={m} triple ({j},{k},{l}): {} vs {lhs}",
                            ratio.ln()
                        );
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Signature sufficiency: within a signature class, history probability
// ratios are free of the heterogeneity.
// ---------------------------------------------------------------------------

const ALPHA_GRID: [f64; 4] = [-2.0, -0.5, 1.0, 2.5];

fn assert_ratios_constant(
    spec: &ModelSpec,
    theta: &Theta,
    t: usize,
    d1: u32,
    x: Option<&[Vec<f64>]>,
    alphas: &[Vec<f64>],
) {
    let classes = sufficiency_classes(spec, t, d1, x).unwrap();
    let mut multi_member = 0;
    for class in &classes {
        if class.members.len() < 2 {
            continue;
        }
        multi_member += 1;
        let reference = &class.members[0];
        for other in &class.members[1..] {
            let mut first_ratio = None;
            for alpha in alphas {
                let lp_ref = history_log_prob(reference, x, d1, alpha, theta, spec, 0.5)
                    .unwrap();
                let lp_other =
                    history_log_prob(other, x, d1, alpha, theta, spec, 0.5).unwrap();
                let ratio = lp_ref - lp_other;
                match first_ratio {
                    None => first_ratio = Some(ratio),
                    Some(r) => assert_relative_eq!(
                        ratio,
                        r,
                        epsilon = 1e-10,
                        max_relative = 1e-10
                    ),
                }
            }
        }
    }
    assert!(multi_member > 0, "trivial partition: no multi-member class");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sufficiency_binary_lag(beta in -2.0..2.0f64) {
        let alphas: Vec<Vec<f64>> = ALPHA_GRID.iter().map(|&a| vec![a]).collect();
        assert_ratios_constant(
            &ModelSpec::binary_lag(),
            &Theta::binary(beta),
            4,
            0,
            None,
            &alphas,
        );
    }

    #[test]
    fn sufficiency_binary_lag_exog(beta in -2.0..2.0f64, gamma in -1.5..1.5f64) {
        let alphas: Vec<Vec<f64>> = ALPHA_GRID.iter().map(|&a| vec![a]).collect();
        // The covariate repeats over the last two periods: switch patterns
        // that trade those periods share a signature, so the partition has
        // multi-member classes to compare.
        let x = vec![vec![0.3], vec![1.1], vec![-0.7], vec![-0.7]];
        assert_ratios_constant(
            &ModelSpec::binary_lag_exog(1),
            &Theta::binary_exog(beta, vec![gamma]),
            4,
            0,
            Some(&x),
            &alphas,
        );
    }

    #[test]
    fn sufficiency_binary_duration(
        b1 in -2.0..2.0f64,
        b2 in -2.0..2.0f64,
        d1 in 0u32..3,
    ) {
        let alphas: Vec<Vec<f64>> = ALPHA_GRID.iter().map(|&a| vec![a]).collect();
        assert_ratios_constant(
            &ModelSpec::binary_duration(2),
            &Theta::duration(vec![b1, b2]),
            4,
            d1,
            None,
            &alphas,
        );
    }

    #[test]
    fn sufficiency_multinomial(b1 in -1.5..1.5f64, b2 in -1.5..1.5f64) {
        let alphas: Vec<Vec<f64>> = vec![
            vec![-1.0, 0.5],
            vec![0.2, -0.8],
            vec![1.5, 1.0],
            vec![-0.4, -0.1],
        ];
        assert_ratios_constant(
            &ModelSpec::multinomial_habit(3),
            &Theta::multinomial(vec![b1, b2]),
            4,
            0,
            None,
            &alphas,
        );
    }
}

// ---------------------------------------------------------------------------
// Class-partition exhaustiveness: the signature classes partition the full
// history space, and every binary history lands in a weight-table class.
// ---------------------------------------------------------------------------

#[test]
fn signature_classes_partition_all_histories() {
    let cases: Vec<(ModelSpec, usize, u32)> = vec![
        (ModelSpec::binary_lag(), 4, 0),
        (ModelSpec::binary_lag(), 6, 0),
        (ModelSpec::binary_duration(2), 4, 0),
        (ModelSpec::binary_duration(2), 4, 2),
        (ModelSpec::multinomial_habit(3), 4, 0),
        (ModelSpec::multinomial_habit(4), 3, 0),
    ];
    let x4 = vec![vec![0.3], vec![-0.7], vec![1.1], vec![-0.7]];
    let mut with_x: Vec<(ModelSpec, usize, u32, Option<Vec<Vec<f64>>>)> = cases
        .into_iter()
        .map(|(s, t, d)| (s, t, d, None))
        .collect();
    with_x.push((ModelSpec::binary_lag_exog(1), 4, 0, Some(x4)));

    for (spec, t, d1, x) in with_x {
        let classes = sufficiency_classes(&spec, t, d1, x.as_deref()).unwrap();
        let mut seen = std::collections::HashSet::new();
        let mut total = 0usize;
        for class in &classes {
            assert_eq!(class.members.len(), class.stats.len());
            for member in &class.members {
                assert!(
                    seen.insert(member.clone()),
                    "{member:?} appears in two classes ({:?}, t={t}, d1={d1})",
                    spec.kind
                );
                total += 1;
            }
        }
        let all = enumerate_histories(spec.num_alternatives, t).unwrap();
        assert_eq!(total, all.len(), "partition misses histories");
        for y in all {
            assert!(seen.contains(&y), "{y:?} not in any class");
        }
    }
}

#[test]
fn weight_tables_cover_every_binary_history() {
    for t in 3..=8usize {
        let table = solve_weights(t, 0.7).unwrap();
        for y in enumerate_histories(2, t).unwrap() {
            let first = y[0];
            let last = y[t - 1];
            let ones = y[1..].iter().map(|&v| u32::from(v)).sum::<u32>();
            assert!(
                table.weight(first, last, ones).is_some(),
                "no weight class for {y:?} at T={t}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient and Hessian versus central finite differences, for all model
// variants, plus concavity of the conditional log-likelihood.
// ---------------------------------------------------------------------------

fn collapsed_fixture(spec: &ModelSpec, t: usize) -> CollapsedPanel {
    // Arbitrary positive pseudo-counts over all histories (two covariate
    // contexts for the exogenous variant, two initial durations for the
    // duration variant) — enough to make every class informative.
    let histories = enumerate_histories(spec.num_alternatives, t).unwrap();
    let mut items = Vec::new();
    for (i, y) in histories.iter().enumerate() {
        let w = 1.0 + ((i % 7) as f64) * 0.8 + ((i % 3) as f64) * 0.25;
        match spec.kind {
            feame::model::ModelKind::BinaryLagExog => {
                let x_a = vec![vec![0.4]; t];
                let x_b = vec![vec![0.4], vec![-0.9], vec![0.7], vec![0.1]][..t].to_vec();
                items.push((y.clone(), Some(x_a), 0, w));
                items.push((y.clone(), Some(x_b), 0, w * 0.6));
            }
            feame::model::ModelKind::BinaryDuration => {
                items.push((y.clone(), None, 0, w));
                items.push((y.clone(), None, 2, w * 0.5));
            }
            _ => items.push((y.clone(), None, 0, w)),
        }
    }
    CollapsedPanel::from_weighted_histories(spec, items).unwrap()
}

fn check_gradient_and_hessian(data: &CollapsedPanel, theta: &[f64]) {
    let (_, grad, hess) = conditional_log_likelihood(data, theta).unwrap();
    let dim = theta.len();
    let h = 1e-5;
    for p in 0..dim {
        let mut up = theta.to_vec();
        up[p] += h;
        let mut dn = theta.to_vec();
        dn[p] -= h;
        let (f_up, g_up, _) = conditional_log_likelihood(data, &up).unwrap();
        let (f_dn, g_dn, _) = conditional_log_likelihood(data, &dn).unwrap();
        let fd_grad = (f_up - f_dn) / (2.0 * h);
        assert!(
            (fd_grad - grad[p]).abs() <= 1e-6 * (1.0 + grad[p].abs()),
            "gradient[{p}] {} vs finite difference {fd_grad}",
            grad[p]
        );
        for q in 0..dim {
            let fd_hess = (g_up[q] - g_dn[q]) / (2.0 * h);
            assert!(
                (fd_hess - hess[p][q]).abs() <= 1e-5 * (1.0 + hess[p][q].abs()),
                "hessian[{p}][{q}] {} vs finite difference {fd_hess}",
                hess[p][q]
            );
        }
    }
}

fn spec_thetas(spec: &ModelSpec, a: f64, b: f64) -> Vec<f64> {
    (0..spec.num_params())
        .map(|i| if i % 2 == 0 { a } else { b })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gradients_match_finite_differences(a in -1.5..1.5f64, b in -1.5..1.5f64) {
        for spec in [
            ModelSpec::binary_lag(),
            ModelSpec::binary_lag_exog(1),
            ModelSpec::binary_duration(2),
            ModelSpec::multinomial_habit(3),
        ] {
            let data = collapsed_fixture(&spec, 4);
            check_gradient_and_hessian(&data, &spec_thetas(&spec, a, b));
        }
    }

    #[test]
    fn hessian_is_negative_semidefinite(a in -2.0..2.0f64, b in -2.0..2.0f64) {
        for spec in [ModelSpec::binary_lag(), ModelSpec::multinomial_habit(3)] {
            let data = collapsed_fixture(&spec, 4);
            let theta = spec_thetas(&spec, a, b);
            let (_, _, hess) = conditional_log_likelihood(&data, &theta).unwrap();
            let dim = theta.len();
            let m = DMatrix::from_fn(dim, dim, |r, c| hess[r][c]);
            let eigen = m.symmetric_eigen();
            for ev in eigen.eigenvalues.iter() {
                prop_assert!(
                    *ev <= 1e-8,
                    "positive Hessian eigenvalue {ev} ({:?})",
                    spec.kind
                );
            }
        }
    }
}

#[test]
fn gradient_matches_on_simulated_panel() {
    let dgp = DgpSpec::from_label("FinMix+1").unwrap();
    let panel = simulate_panel(&dgp, 300, 5, 424242).unwrap();
    let data = collapse_panel(&panel, &ModelSpec::binary_lag()).unwrap();
    for beta in [-1.0, -0.2, 0.0, 0.7, 1.4] {
        check_gradient_and_hessian(&data, &[beta]);
    }
}

#[test]
fn singleton_classes_contribute_nothing() {
    // Constant histories are alone in their class: the conditional
    // likelihood must be exactly flat in them.
    let spec = ModelSpec::binary_lag();
    let data = CollapsedPanel::from_weighted_histories(
        &spec,
        vec![
            (vec![0, 0, 0, 0], None, 0, 5.0),
            (vec![1, 1, 1, 1], None, 0, 2.0),
        ],
    )
    .unwrap();
    for beta in [-1.0, 0.0, 2.0] {
        let (value, grad, hess) = conditional_log_likelihood(&data, &[beta]).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad, vec![0.0]);
        assert_eq!(hess, vec![vec![0.0]]);
    }
}

// ---------------------------------------------------------------------------
// Over-identification: the one-period effect recovered through the weight
// system agrees across every window length the data support.
// ---------------------------------------------------------------------------

fn over_identification_check(beta: f64) {
    let truth = true_ame1(&ALPHA_MIX3, beta);
    let dist6 = lag_population(&ALPHA_MIX3, beta, 6);
    let mut estimates = Vec::new();
    for t in 3..=6usize {
        let dist = if t == 6 {
            dist6.clone()
        } else {
            dist6.marginalize_to(t).unwrap()
        };
        let table = solve_weights(t, beta).unwrap();
        estimates.push(ame1_from_weights(&table, &dist).unwrap());
    }
    for (i, est) in estimates.iter().enumerate() {
        assert!(
            (est - truth).abs() <= 1e-10 * (1.0 + truth.abs()),
            "window length {} disagrees with the population value: {est} vs {truth}",
            i + 3
        );
        assert!(
            (est - estimates[0]).abs() <= 1e-10 * (1.0 + estimates[0].abs()),
            "window lengths disagree: {est} vs {}",
            estimates[0]
        );
    }
}

#[test]
fn over_identification_at_reference_slopes() {
    for beta in [-1.3, 0.5, 1.0, 2.0, 0.0] {
        over_identification_check(beta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn over_identification_across_window_lengths(beta in -2.5..2.5f64) {
        over_identification_check(beta);
    }
}

// ---------------------------------------------------------------------------
// Determinism: bootstrap draws and whole experiments are functions of their
// seeds.
// ---------------------------------------------------------------------------

fn ones_share(panel: &Panel) -> feame::Result<f64> {
    let mut ones = 0usize;
    let mut total = 0usize;
    for ind in panel.individuals() {
        ones += ind.y.iter().filter(|&&v| v == 1).count();
        total += ind.y.len();
    }
    Ok(ones as f64 / total as f64)
}

#[test]
fn bootstrap_is_deterministic_in_the_seed() {
    let dgp = DgpSpec::from_label("NoUH+1").unwrap();
    let panel = simulate_panel(&dgp, 120, 4, 99).unwrap();

    let a = bootstrap_se(&panel, ones_share, 60, 1234).unwrap();
    let b = bootstrap_se(&panel, ones_share, 60, 1234).unwrap();
    assert_eq!(a.replicates, b.replicates, "same seed, different draws");
    assert_eq!(a.se, b.se);

    let c = bootstrap_se(&panel, ones_share, 60, 1235).unwrap();
    assert_ne!(a.replicates, c.replicates, "different seed, same draws");
}

#[test]
fn fitted_bootstrap_is_deterministic_in_the_seed() {
    let dgp = DgpSpec::from_label("FinMix+1").unwrap();
    let panel = simulate_panel(&dgp, 200, 4, 77).unwrap();
    let fit_beta = |p: &Panel| {
        feame::likelihood::cml_estimate(p, &ModelSpec::binary_lag(), &CmlOptions::default())
            .map(|e| e.theta[0])
    };
    let a = bootstrap_se(&panel, fit_beta, 25, 31).unwrap();
    let b = bootstrap_se(&panel, fit_beta, 25, 31).unwrap();
    assert_eq!(a.replicates, b.replicates);
    assert_eq!(a.se, b.se);
}

#[test]
fn experiments_are_deterministic_in_the_seed() {
    let config = ExperimentConfig {
        dgp: DgpInput::Label("NoUH+1".to_string()),
        n: 150,
        t: 4,
        r: 3,
        estimators: vec![EstimatorKind::FeCml, EstimatorKind::NoUhMle],
        tests: vec![],
        seed: 7,
        bootstrap_b: 9,
        null_estimator: EstimatorKind::ReMle,
    };
    let first = run_experiment(&config).unwrap();
    let second = run_experiment(&config).unwrap();
    assert_eq!(csv_table(&first), csv_table(&second));
}
