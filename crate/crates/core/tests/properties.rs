use latent_ipw::att::{estimate_att, hajek_att};
use latent_ipw::diagnostics::{asd, overlap_report};
use latent_ipw::factor_model::{estimate_factors, select_num_factors, standardize_returns, PanelData};
use latent_ipw::numeric::{logistic, mean, sample_variance, softplus};
use latent_ipw::propensity::fit_logistic;
use latent_ipw::simulation::{simulate_draw, Case, SimScenario};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = DMatrix<f64>> {
    (rows, cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-5.0f64..5.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

/// Values with a treatment split holding at least two units per group.
fn grouped(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    n.prop_flat_map(|n| {
        (
            proptest::collection::vec(-10.0f64..10.0, n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
    .prop_map(|(v, mut z)| {
        z[0] = true;
        z[1] = true;
        z[2] = false;
        z[3] = false;
        (v, z)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factors_satisfy_normalization(y in matrix(5..14, 5..14), r in 1usize..4) {
        let r = r.min(y.nrows().min(y.ncols()) - 1);
        let fit = estimate_factors(&y, r).unwrap();
        let t0 = y.nrows() as f64;
        let ftf = fit.factors.transpose() * &fit.factors / t0;
        prop_assert!((ftf - DMatrix::identity(r, r)).amax() < 1e-9);
        let ll = fit.loadings.transpose() * &fit.loadings;
        for j in 0..r {
            for k in 0..r {
                if j != k {
                    prop_assert!(ll[(j, k)].abs() < 1e-8 * ll.amax().max(1.0));
                }
            }
            if j > 0 {
                prop_assert!(ll[(j, j)] <= ll[(j - 1, j - 1)] * (1.0 + 1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn residual_variance_is_non_increasing(y in matrix(6..14, 6..14)) {
        let r_max = y.nrows().min(y.ncols()) - 1;
        let sel = select_num_factors(&y, r_max).unwrap();
        prop_assert_eq!(sel.table.len(), r_max);
        prop_assert!(sel.table.windows(2).all(|w| w[1].v <= w[0].v));
        prop_assert!((1..=r_max).contains(&sel.r_ic1) && (1..=r_max).contains(&sel.r_ic2));
    }

    #[test]
    fn standardized_pre_rows_have_unit_moments(y in matrix(4..20, 1..6)) {
        prop_assume!((0..y.ncols()).all(|i| {
            let pre: Vec<f64> = y.column(i).iter().take(y.nrows() - 1).copied().collect();
            sample_variance(&pre) > 1e-6
        }));
        let s = standardize_returns(&y).unwrap();
        for i in 0..y.ncols() {
            let pre: Vec<f64> = s.column(i).iter().take(y.nrows() - 1).copied().collect();
            prop_assert!(mean(&pre).abs() < 1e-12);
            prop_assert!((sample_variance(&pre) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hajek_is_shift_invariant_and_scale_equivariant(
        (y, z) in grouped(4..30),
        e_raw in proptest::collection::vec(0.05f64..0.95, 30),
        shift in -100.0f64..100.0,
        scale in 0.1f64..10.0,
    ) {
        let e = &e_raw[..y.len()];
        let base = hajek_att(&y, &z, e).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let tol = 1e-9 * (1.0 + shift.abs()) * 10.0;
        prop_assert!((hajek_att(&shifted, &z, e).unwrap().tau_att - base.tau_att).abs() < tol);
        prop_assert!((hajek_att(&scaled, &z, e).unwrap().tau_att - scale * base.tau_att).abs() < 1e-9 * scale * 10.0);
    }

    #[test]
    fn constant_scores_give_difference_in_means((y, z) in grouped(4..30), p in 0.05f64..0.95) {
        let e = vec![p; y.len()];
        let est = hajek_att(&y, &z, &e).unwrap();
        let t: Vec<f64> = y.iter().zip(&z).filter(|(_, &z)| z).map(|(&v, _)| v).collect();
        let c: Vec<f64> = y.iter().zip(&z).filter(|(_, &z)| !z).map(|(&v, _)| v).collect();
        prop_assert!((est.tau_att - (mean(&t) - mean(&c))).abs() < 1e-10);
    }

    #[test]
    fn asd_is_affine_invariant((v, z) in grouped(4..30), a in 0.1f64..10.0, b in -10.0f64..10.0) {
        let w = vec![1.0; v.len()];
        let base = asd(&v, &z, &w);
        prop_assume!(base.is_ok());
        let t: Vec<f64> = v.iter().map(|x| a * x + b).collect();
        let got = asd(&t, &z, &w).unwrap();
        prop_assert!((got - base.unwrap()).abs() < 1e-8 * (1.0 + got));
    }

    #[test]
    fn overlap_counts_partition_units(e in proptest::collection::vec(0.001f64..0.999, 2..60), bins in 2usize..30) {
        let z: Vec<bool> = (0..e.len()).map(|i| i % 3 == 0).collect();
        let rep = overlap_report(&e, &z, bins).unwrap();
        let total: usize = rep.treated_counts.iter().chain(&rep.control_counts).sum();
        prop_assert_eq!(total, e.len());
        prop_assert_eq!(rep.edges.len(), bins + 1);
        prop_assert!(*rep.edges.last().unwrap() >= e.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn logistic_identities(x in -700.0f64..700.0) {
        let p = logistic(x);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p + logistic(-x) - 1.0).abs() < 1e-15);
        prop_assert!(softplus(x) >= x.max(0.0));
        prop_assert!((softplus(x) - softplus(-x) - x).abs() < 1e-12 * (1.0 + x.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn att_and_se_scale_with_outcomes(seed in 0u64..1000, scale in 0.2f64..5.0) {
        let mut scn = SimScenario::table(Case::Case1, 3).unwrap().with_seed(seed);
        scn.n_units = 200;
        scn.n_periods = 30;
        let draw = simulate_draw(&scn, 0).unwrap();
        let p = &draw.panel;
        let ffit = estimate_factors(p.y_pre(), 3).unwrap();
        let pfit = fit_logistic(&ffit.loadings, p.treated()).unwrap();
        let base = estimate_att(p, &ffit, &pfit).unwrap();
        let scaled_panel = PanelData::new(
            p.y_pre().clone(),
            p.y_final() * scale,
            p.treated().to_vec(),
            p.unit_ids().to_vec(),
            p.time_labels().to_vec(),
        ).unwrap();
        let scaled = estimate_att(&scaled_panel, &ffit, &pfit).unwrap();
        prop_assert!((scaled.tau_att - scale * base.tau_att).abs() < 1e-10 * scale);
        prop_assert!((scaled.se - scale * base.se).abs() < 1e-10 * scale);
        prop_assert!((scaled.p_value - base.p_value).abs() < 1e-9);
    }
}
