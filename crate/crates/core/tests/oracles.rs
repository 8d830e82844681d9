mod common;

use common::{logistic_mle_bisection, random_matrix, stacked_att_variance, svd_truncation};
use latent_ipw::att::{estimate_att, hajek_att};
use latent_ipw::factor_model::{estimate_factors, objective};
use latent_ipw::numeric::logistic;
use latent_ipw::propensity::{beta_variance, fit_logistic, score, score_loading_jacobian};
use latent_ipw::simulation::{simulate_draw, Case, SimScenario};
use nalgebra::{DMatrix, DVector};

#[test]
fn factor_fit_equals_svd_truncation() {
    for seed in 0..50u64 {
        let t0 = 6 + (seed as usize % 9);
        let n = 5 + (seed as usize * 7 % 11);
        let r = 1 + seed as usize % (t0.min(n) - 1);
        let y = random_matrix(t0, n, seed);
        let fit = estimate_factors(&y, r).unwrap();
        let ours = &fit.factors * fit.loadings.transpose();
        let oracle = svd_truncation(&y, r);
        let gap = (&ours - &oracle).amax();
        assert!(gap < 1e-9, "seed {seed}: {gap}");
    }
}

#[test]
fn factor_fit_minimizes_objective_over_perturbations() {
    let y = random_matrix(12, 20, 99);
    let fit = estimate_factors(&y, 2).unwrap();
    let best = objective(&y, &fit.factors, &fit.loadings);
    let noise = random_matrix(12, 2, 100) * 1e-3;
    let f2 = &fit.factors + noise;
    // Least-squares loadings for the perturbed factors.
    let l2 = (y.transpose() * &f2) * (f2.transpose() * &f2).try_inverse().unwrap();
    assert!(objective(&y, &f2, &l2) > best);
}

#[test]
fn in_sample_residuals_are_orthogonal_to_factors() {
    let y = random_matrix(30, 40, 7);
    let fit = estimate_factors(&y, 3).unwrap();
    let cross = fit.factors.transpose() * &fit.residuals;
    assert!(cross.amax() < 1e-10 * y.amax() * 30.0);
}

#[test]
fn logistic_fit_matches_bisection_on_single_covariate() {
    for seed in 0..5u64 {
        let x = random_matrix(40, 1, 200 + seed) * 2.0;
        let u = random_matrix(40, 1, 300 + seed);
        let treated: Vec<bool> = (0..40).map(|i| (u[i] + 1.0) / 2.0 < logistic(-0.4 + 0.9 * x[i])).collect();
        let fit = fit_logistic(&x, &treated).unwrap();
        let z: Vec<f64> = treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let (b0, b1) = logistic_mle_bisection(x.as_slice(), &z);
        assert!((fit.beta[0] - b0).abs() < 1e-8, "seed {seed}");
        assert!((fit.beta[1] - b1).abs() < 1e-8, "seed {seed}");
    }
}

#[test]
fn four_unit_hajek_example() {
    let est = hajek_att(&[3.0, 5.0, 2.0, 4.0], &[true, true, false, false], &[0.5, 0.5, 0.2, 0.8]).unwrap();
    assert!((est.tau_att - (4.0 - 16.5 / 4.25)).abs() < 1e-12);
}

#[test]
fn score_and_jacobian_match_finite_differences() {
    let beta = DVector::from_vec(vec![-0.3, 0.8, -0.5]);
    let lambda = DVector::from_vec(vec![0.4, 1.2]);
    for z in [0.0, 1.0] {
        let jac = score_loading_jacobian(&beta, &lambda, z);
        let s = |l: &DVector<f64>| {
            let x = DVector::from_fn(3, |j, _| if j == 0 { 1.0 } else { l[j - 1] });
            score(&beta, &x, z)
        };
        let h = 1e-6;
        for k in 0..2 {
            let mut up = lambda.clone();
            let mut dn = lambda.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (s(&up) - s(&dn)) / (2.0 * h);
            for j in 0..3 {
                let rel = (fd[j] - jac[(j, k)]).abs() / jac[(j, k)].abs().max(1e-3);
                assert!(rel < 1e-6, "z={z} ({j},{k}): {} vs {}", fd[j], jac[(j, k)]);
            }
        }
    }
}

fn small_draw(seed: u64) -> latent_ipw::simulation::SimDraw {
    let mut scn = SimScenario::table(Case::Case1, 2).unwrap().with_seed(seed);
    scn.n_units = 400;
    scn.n_periods = 40;
    simulate_draw(&scn, 0).unwrap()
}

#[test]
fn influence_variance_matches_stacked_m_estimation() {
    for seed in 0..4 {
        let draw = small_draw(seed);
        let panel = &draw.panel;
        let ffit = estimate_factors(panel.y_pre(), 3).unwrap();
        let pfit = fit_logistic(&ffit.loadings, panel.treated()).unwrap();
        let att = estimate_att(panel, &ffit, &pfit).unwrap();
        let oracle = stacked_att_variance(
            &pfit.design,
            &pfit.treated,
            panel.y_final().as_slice(),
            att.tau1,
            att.tau0,
            &pfit.beta,
        );
        let rel = (att.variance - oracle).abs() / oracle;
        assert!(rel < 1e-6, "seed {seed}: {} vs {oracle}", att.variance);
    }
}

#[test]
fn influence_values_sum_to_zero() {
    let draw = small_draw(11);
    let ffit = estimate_factors(draw.panel.y_pre(), 3).unwrap();
    let pfit = fit_logistic(&ffit.loadings, draw.panel.treated()).unwrap();
    let att = estimate_att(&draw.panel, &ffit, &pfit).unwrap();
    let total: f64 = att.influence.iter().sum();
    let scale: f64 = att.influence.iter().map(|v| v.abs()).sum();
    assert!(total.abs() < 1e-9 * scale);
}

#[test]
fn loading_correction_widens_coefficient_variance() {
    let draw = small_draw(12);
    let ffit = estimate_factors(draw.panel.y_pre(), 3).unwrap();
    let pfit = fit_logistic(&ffit.loadings, draw.panel.treated()).unwrap();
    let adjusted = beta_variance(&pfit, &ffit).unwrap();
    // Plain sandwich without the loading term.
    let n = pfit.n_units();
    let e_inv = pfit.info_matrix.clone().try_inverse().unwrap();
    let mut b = DMatrix::zeros(4, 4);
    for i in 0..n {
        let s = score(&pfit.beta, &pfit.design.row(i).transpose(), pfit.treated[i]);
        b += &s * s.transpose();
    }
    let plain = &e_inv * (b / n as f64) * &e_inv;
    let diff = &adjusted.avar - plain;
    let eig = diff.symmetric_eigen();
    assert!(eig.eigenvalues.min() > -1e-9 * adjusted.avar.amax());
}
