mod common;

use gformula::gformula::{standardize_exact, summarize_effect};
use gformula::glm::fit_mle;
use gformula::harness::Metrics;
use gformula::model::{Family, Prior, Regime};
use gformula::simgen::{nu_from_rho, rho_from_nu};
use gformula::terms::{build_design, DesignMatrix, Role};
use gformula::TermList;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nu_satisfies_table_constraints(rho in 0.0f64..0.99) {
        let nu = nu_from_rho(rho).unwrap();
        prop_assert!((nu.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        prop_assert!((nu[0] + nu[1] - 0.5).abs() < 1e-15);
        prop_assert!((nu[0] + nu[2] - 0.5).abs() < 1e-15);
        prop_assert!(nu.iter().all(|v| (0.0..=0.5).contains(v)));
        prop_assert!((rho_from_nu(nu) - rho).abs() < 1e-12);
    }

    #[test]
    fn lagged_sum_equals_unlagged_sum_one_step_earlier(seed in any::<u64>()) {
        let p = common::random_binary_panel(&mut common::rng(seed), 12, 3, 1);
        let lag1 = TermList::parse("1 + cumlag(x) + cumlag(l1)").unwrap();
        let lag0 = TermList::parse("1 + cum(x) + cum(l1)").unwrap();
        for t in 1..=p.horizon() {
            let (a, rows_a) = build_design(&p, &lag1, &Role::Outcome, t, None).unwrap();
            let (b, rows_b) = build_design(&p, &lag0, &Role::Outcome, t - 1, None).unwrap();
            for (i, s) in rows_a.iter().enumerate() {
                let j = rows_b.iter().position(|r| r == s).unwrap();
                prop_assert_eq!(a.row(i), b.row(j));
            }
        }
    }

    #[test]
    fn regime_override_only_changes_exposure_columns(seed in any::<u64>(), g in 0u8..2) {
        let p = common::random_binary_panel(&mut common::rng(seed), 10, 2, 1);
        let terms = TermList::parse("1 + t + x + cumlag(x) + l1 + cum(l1) + x*l1").unwrap();
        let regime = Regime::new(g).unwrap();
        for t in 0..=p.horizon() {
            let (raw, _) = build_design(&p, &terms, &Role::Outcome, t, None).unwrap();
            let (again, _) = build_design(&p, &terms, &Role::Outcome, t, None).unwrap();
            let (set, _) = build_design(&p, &terms, &Role::Outcome, t, Some(regime)).unwrap();
            prop_assert_eq!(&raw, &again);
            for j in [0, 1, 4, 5] {
                prop_assert_eq!(raw.column(j), set.column(j));
            }
            prop_assert!(set.column(2).iter().all(|v| *v == regime.value()));
        }
    }

    #[test]
    fn mle_ignores_row_order(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = 80;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, r.random_range(-2.0..2.0), (r.random::<f64>() < 0.5) as u8 as f64]).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|x| (r.random::<f64>() < gformula::glm::expit(-0.3 + 0.8 * x[1] - 0.5 * x[2])) as u8 as f64)
            .collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        for family in [Family::BernoulliLogit, Family::GaussianIdentity] {
            let a = fit_mle(&DesignMatrix::from_rows(&rows).unwrap(), &y, family).unwrap();
            let pr: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
            let b = fit_mle(&DesignMatrix::from_rows(&pr).unwrap(), &py, family).unwrap();
            for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((u - v).abs() <= 1e-10, "{:?} vs {:?}", a.coefficients, b.coefficients);
            }
        }
    }

    #[test]
    fn irls_likelihood_never_decreases(seed in any::<u64>(), n in 5usize..60) {
        let mut r = common::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, r.random_range(-3.0..3.0), r.random_range(-1.0..1.0)]).collect();
        let shift: f64 = r.random_range(-4.0..4.0);
        let y: Vec<f64> = rows.iter().map(|x| (r.random::<f64>() < gformula::glm::expit(shift + 2.0 * x[1])) as u8 as f64).collect();
        let fit = fit_mle(&DesignMatrix::from_rows(&rows).unwrap(), &y, Family::BernoulliLogit).unwrap();
        prop_assert!(fit.coefficients.iter().all(|c| c.is_finite()));
        if fit.divergence_flag {
            prop_assert!(fit.coefficients.iter().all(|c| c.abs() <= gformula::glm::COEF_BOUND));
        }
        for w in fit.trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "trace {:?}", fit.trace);
        }
    }

    #[test]
    fn standardized_risks_bounded_and_order_free(seed in any::<u64>(), c in 0usize..3, k in 1usize..4) {
        let mut r = common::rng(seed);
        let spec = common::random_spec(&mut r, c);
        let p = common::random_binary_panel(&mut r, 9, k, c);
        let mut order: Vec<usize> = (0..p.n_subjects()).collect();
        order.reverse();
        let q = p.resample(&order);
        for g in [Regime::ALWAYS, Regime::NEVER] {
            let a = standardize_exact(&spec, &p, g, k).unwrap();
            let b = standardize_exact(&spec, &q, g, k).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((0.0..=1.0).contains(u));
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn wald_interval_brackets_point(draws in prop::collection::vec(-1.0f64..1.0, 2..200)) {
        let (e, _) = summarize_effect(&draws, None).unwrap();
        prop_assert!(e.wald.low <= e.point && e.point <= e.wald.high);
        prop_assert!(e.percentile.low <= e.percentile.high);
    }

    #[test]
    fn mse_is_mean_squared_error(
        truth in -0.5f64..0.5,
        est in prop::collection::vec((-1.0f64..1.0, 0.0f64..0.5), 2..300),
    ) {
        let m = Metrics::compute(truth, &est).unwrap();
        let direct = est.iter().map(|(e, _)| (truth - e).powi(2)).sum::<f64>() / est.len() as f64;
        prop_assert!((m.mse - direct).abs() <= 1e-12);
        prop_assert!(m.mse >= m.mean_bias * m.mean_bias - 1e-15);
        prop_assert!((0.0..=1.0).contains(&m.coverage));
    }

    #[test]
    fn laplace_density_matches_formula(mean in -2.0f64..2.0, rate in 0.01f64..10.0, v in -5.0f64..5.0) {
        let lp = Prior::DoubleExponential { mean, rate }.log_density(v);
        let direct = (rate / 2.0 * (-rate * (v - mean).abs()).exp()).ln();
        prop_assert!((lp - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }
}
