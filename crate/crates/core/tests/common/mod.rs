//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use latent_ipw::numeric::logistic;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Best rank-`r` approximation by truncated SVD.
pub fn svd_truncation(y: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = y.clone().svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    for &k in order.iter().take(r) {
        out += u.column(k) * vt.row(k) * svd.singular_values[k];
    }
    out
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Logistic MLE with one covariate by nested bisection: the intercept solves
/// its score equation for each slope, and the slope solves the profiled
/// slope score.
pub fn logistic_mle_bisection(x: &[f64], z: &[f64]) -> (f64, f64) {
    let b0_of = |b1: f64| bisect(-50.0, 50.0, |b0| x.iter().zip(z).map(|(&x, &z)| z - logistic(b0 + b1 * x)).sum());
    let slope_score = |b1: f64| {
        let b0 = b0_of(b1);
        x.iter().zip(z).map(|(&x, &z)| x * (z - logistic(b0 + b1 * x))).sum::<f64>()
    };
    let b1 = bisect(-30.0, 30.0, slope_score);
    (b0_of(b1), b1)
}

/// Hájek ATT variance by stacking `(τ1, τ0, β)` estimating equations with
/// the loadings held fixed: `A⁻¹ B A⁻ᵀ / N` with a finite-difference `A`.
pub fn stacked_att_variance(design: &DMatrix<f64>, z: &[f64], y: &[f64], tau1: f64, tau0: f64, beta: &DVector<f64>) -> f64 {
    let n = design.nrows();
    let p = design.ncols();
    let dim = p + 2;
    let psi = |theta: &DVector<f64>, i: usize| -> DVector<f64> {
        let b = theta.rows(2, p).into_owned();
        let x = design.row(i).transpose();
        let e = logistic(x.dot(&b));
        let mut out = DVector::zeros(dim);
        out[0] = z[i] * (y[i] - theta[0]);
        out[1] = (1.0 - z[i]) * e / (1.0 - e) * (y[i] - theta[1]);
        out.rows_mut(2, p).copy_from(&(x * (z[i] - e)));
        out
    };
    let mean_psi = |theta: &DVector<f64>| -> DVector<f64> {
        (0..n).fold(DVector::zeros(dim), |acc, i| acc + psi(theta, i)) / n as f64
    };
    let mut theta = DVector::zeros(dim);
    theta[0] = tau1;
    theta[1] = tau0;
    theta.rows_mut(2, p).copy_from(beta);
    let h = 1e-6;
    let mut a = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[k] += h;
        dn[k] -= h;
        let d = (mean_psi(&up) - mean_psi(&dn)) / (2.0 * h);
        a.set_column(k, &(-d));
    }
    let mut b = DMatrix::zeros(dim, dim);
    for i in 0..n {
        let s = psi(&theta, i);
        b += &s * s.transpose();
    }
    b /= n as f64;
    let a_inv = a.try_inverse().expect("invertible Jacobian");
    let v = &a_inv * b * a_inv.transpose() / n as f64;
    v[(0, 0)] + v[(1, 1)] - 2.0 * v[(0, 1)]
}
