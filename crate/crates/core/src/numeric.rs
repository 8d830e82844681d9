//! Small numerical kernels shared across modules.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Logistic function, evaluated without overflow for large |x|.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let ex = x.exp();
        ex / (1.0 + ex)
    }
}

/// `ln(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so results do not drift with scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator; zero for a single value.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// Inverse of a symmetric definite matrix (either sign). Fails when the
/// matrix is singular relative to `1e-12` of its largest diagonal entry.
pub fn symmetric_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 || n != m.ncols() {
        return Err(Error::SingularInformation);
    }
    // Work on the positive definite member of {m, -m}.
    let sign = if m[(0, 0)] < 0.0 { -1.0 } else { 1.0 };
    let pd = m * sign;
    let scale = pd.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularInformation);
    }
    let chol = pd.cholesky().ok_or(Error::SingularInformation)?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
    if min_pivot < 1e-12 * scale {
        return Err(Error::SingularInformation);
    }
    Ok(chol.inverse() * sign)
}
