//! Property tests for the structural invariants: discount-evolution
//! identities, weight-normalization invariance, error-summary ordering,
//! interval monotonicity, and selection equivariance.

mod common;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sgdlm_core::eval::{coverage, prediction_interval, rmse_mad, sma, IntervalSpec};
use sgdlm_core::special::{digamma, ln_gamma};
use sgdlm_core::{
    argmax_discounts, evolve, evolve_block, normalize_weights, select_parents,
    simulate_synthetic, CouplingDesign, DiscountSet, NormalGamma, ReturnsPanel,
    SyntheticScenario,
};

fn arb_spd(p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-2.0..2.0f64, p * p).prop_map(move |v| {
        let b = DMatrix::from_vec(p, p, v);
        &b * b.transpose() + DMatrix::identity(p, p) * 0.5
    })
}

fn arb_ng(p: usize) -> impl Strategy<Value = NormalGamma> {
    (
        arb_spd(p),
        proptest::collection::vec(-3.0..3.0f64, p),
        2.0..30.0f64,
        0.01..4.0f64,
    )
        .prop_map(move |(r, a, dof, c)| {
            NormalGamma::new(DVector::from_vec(a), r, dof, c).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn digamma_recurrence(x in 0.05f64..40.0) {
        let lhs = digamma(x + 1.0).unwrap();
        let rhs = digamma(x).unwrap() + 1.0 / x;
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn ln_gamma_recurrence(x in 0.1f64..50.0) {
        let lhs = ln_gamma(x + 1.0);
        let rhs = ln_gamma(x) + x.ln();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn unit_discounts_preserve_the_posterior(ng in arb_ng(3)) {
        let evolved = evolve(&ng, 1.0, 1.0).unwrap();
        prop_assert_eq!(evolved, ng);
    }

    #[test]
    fn half_discount_doubles_spread(ng in arb_ng(2)) {
        let evolved = evolve(&ng, 1.0, 0.5).unwrap();
        for (a, b) in evolved.scale_matrix().iter().zip(ng.scale_matrix().iter()) {
            prop_assert_eq!(*a, 2.0 * *b);
        }
        prop_assert_eq!(evolved.location(), ng.location());
    }

    #[test]
    fn block_evolution_reduces_to_plain_on_block_diagonal_input(
        ng in arb_ng(3),
        delta in 0.5f64..1.0,
        beta in 0.5f64..1.0,
    ) {
        // Censor the cross-block entries, keeping both diagonal blocks.
        let mut c = ng.scale_matrix().clone();
        for j in 1..3 {
            c[(0, j)] = 0.0;
            c[(j, 0)] = 0.0;
        }
        let censored = NormalGamma::new(
            ng.location().clone(),
            c,
            ng.dof(),
            ng.variance_estimate(),
        )
        .unwrap();
        let blocked = evolve_block(&censored, beta, delta, delta).unwrap();
        let plain = evolve(&censored, beta, delta).unwrap();
        prop_assert_eq!(blocked, plain);
    }

    #[test]
    fn weight_normalization_ignores_scale(
        raw in proptest::collection::vec(1e-3f64..1e3, 2..120),
        scale in 1e-6f64..1e6,
    ) {
        let (w1, d1) = normalize_weights(&raw).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|r| r * scale).collect();
        let (w2, d2) = normalize_weights(&scaled).unwrap();
        for (a, b) in w1.iter().zip(&w2) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs());
        }
        prop_assert!((d1.ess - d2.ess).abs() <= 1e-9 * d1.ess);
        prop_assert!((d1.kl - d2.kl).abs() <= 1e-9 * (1.0 + d1.kl));
    }

    #[test]
    fn rmse_dominates_mad(
        pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..60),
    ) {
        let obs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let fit: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (rmse, mad) = rmse_mad(&obs, &fit).unwrap();
        prop_assert!(rmse >= mad - 1e-12);
    }

    #[test]
    fn interval_width_shrinks_with_more_draws(
        variance in 0.01f64..10.0,
        z in 0.1f64..3.0,
        k1 in 1usize..5000,
        extra in 1usize..5000,
    ) {
        let (lo1, hi1) = prediction_interval(0.0, variance, k1, z).unwrap();
        let (lo2, hi2) = prediction_interval(0.0, variance, k1 + extra, z).unwrap();
        prop_assert!(hi2 - lo2 <= hi1 - lo1);
    }

    #[test]
    fn argmax_is_invariant_to_per_series_shifts(
        rows in proptest::collection::vec(
            proptest::collection::vec(-100.0f64..100.0, 5),
            1..6,
        ),
        shifts in proptest::collection::vec(-1000.0f64..1000.0, 6),
    ) {
        let grid = [0.85, 0.9, 0.93, 0.96, 0.99];
        let (base, _) = argmax_discounts(&grid, &rows).unwrap();
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|v| v + shifts[i % shifts.len()]).collect())
            .collect();
        let (moved, _) = argmax_discounts(&grid, &shifted).unwrap();
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn sma_of_a_constant_is_constant(
        c in -10.0f64..10.0,
        len in 3usize..50,
        window_seed in 1usize..50,
    ) {
        let window = 1 + window_seed % len;
        let series = vec![c; len];
        let out = sma(&series, window).unwrap();
        prop_assert_eq!(out.len(), len - window + 1);
        for v in out {
            prop_assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_gains_with_wider_multipliers(
        values in proptest::collection::vec(-4.0f64..4.0, 12),
        z1 in 0.1f64..1.5,
        extra in 0.1f64..2.0,
    ) {
        let observed = DMatrix::from_vec(6, 2, values);
        let forecast = DMatrix::zeros(6, 2);
        let variance = DMatrix::from_element(6, 2, 1.0);
        let narrow = [IntervalSpec::new(0.5, z1).unwrap()];
        let wide = [IntervalSpec::new(0.5, z1 + extra).unwrap()];
        let cn = coverage(&observed, &forecast, &variance, 100, &narrow).unwrap();
        let cw = coverage(&observed, &forecast, &variance, 100, &wide).unwrap();
        for i in 0..2 {
            prop_assert!(cw.per_series[0][i] >= cn.per_series[0][i]);
        }
        prop_assert!(cw.aggregate[0] >= cn.aggregate[0]);
    }
}

/// Relabeling the panel's series must relabel the parent report the same
/// way without changing any effect size.
#[test]
fn parent_selection_is_permutation_equivariant() {
    let m = 4;
    let scenario = SyntheticScenario::mild(m, 120, CouplingDesign::Ring { strength: 0.3 });
    let (panel, _) = simulate_synthetic(&scenario, 31).unwrap();
    let prior = NormalGamma::new(
        DVector::zeros(m),
        DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| {
            if i == 0 {
                1e-4
            } else {
                1e-2
            }
        })),
        5.0,
        1e-4,
    )
    .unwrap();
    let discounts = DiscountSet::new(0.95, 0.99, 0.95).unwrap();
    let base = select_parents(&panel, 1, &prior, &discounts).unwrap();

    // New series j is old series perm[j].
    let perm = [2usize, 0, 3, 1];
    let mut inverse = [0usize; 4];
    for (j, &old) in perm.iter().enumerate() {
        inverse[old] = j;
    }
    let values = DMatrix::from_fn(panel.n_days(), m, |t, j| panel.values()[(t, perm[j])]);
    let tickers = perm.iter().map(|&old| panel.tickers()[old].clone()).collect();
    let permuted_panel = ReturnsPanel::new(panel.dates().to_vec(), tickers, values).unwrap();
    let permuted = select_parents(&permuted_panel, 1, &prior, &discounts).unwrap();

    for j in 0..m {
        let expected: Vec<(usize, f64)> = base.ranked[perm[j]]
            .iter()
            .map(|&(cand, eff)| (inverse[cand], eff))
            .collect();
        let got = &permuted.ranked[j];
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.0, e.0, "series {j}: candidate order changed");
            assert_relative_eq!(g.1, e.1, max_relative = 1e-9);
        }
        assert_eq!(permuted.chosen[j][0], inverse[base.chosen[perm[j]][0]]);
    }
}

/// The chosen parents must be the strongest couplings in ranked order, and
/// the report must assemble into a valid structure.
#[test]
fn parent_report_is_internally_consistent() {
    let m = 4;
    let scenario = SyntheticScenario::mild(m, 150, CouplingDesign::MutualPairs { strength: 0.5 });
    let (panel, _) = simulate_synthetic(&scenario, 77).unwrap();
    let prior = NormalGamma::new(
        DVector::zeros(m),
        DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| {
            if i == 0 {
                1e-4
            } else {
                1e-2
            }
        })),
        5.0,
        1e-4,
    )
    .unwrap();
    let discounts = DiscountSet::new(0.95, 0.99, 0.95).unwrap();
    let report = select_parents(&panel, 2, &prior, &discounts).unwrap();
    let structure = report.structure().unwrap();
    assert_eq!(structure.m(), m);
    assert_eq!(structure.k(), 2);
    for i in 0..m {
        let ranked = &report.ranked[i];
        assert_eq!(ranked.len(), m - 1);
        for w in ranked.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        assert_eq!(
            report.chosen[i],
            ranked[..2].iter().map(|p| p.0).collect::<Vec<_>>()
        );
    }
}
