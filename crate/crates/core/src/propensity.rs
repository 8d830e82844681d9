//! Logistic propensity score on estimated loadings: Newton–Raphson MLE,
//! score and information, the loading Jacobian of the score, and the
//! coefficient sandwich that accounts for loading estimation noise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor_model::FactorFit;
use crate::numeric::{logistic, softplus, symmetric_inverse};

/// Scores are required to lie strictly inside `(EPS, 1 - EPS)`.
pub const SCORE_EPS: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 30;
const SCORE_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-10;
const SEPARATION_NORM: f64 = 1e3;
/// Log-likelihood this close to zero means the classes are (quasi-)separated.
const PERFECT_FIT_LOGLIK: f64 = 1e-6;
/// Units with scores outside `[EXTREME_LOW, EXTREME_HIGH]` are reported.
pub const EXTREME_LOW: f64 = 0.01;
pub const EXTREME_HIGH: f64 = 0.99;

/// Fitted logistic propensity model with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    /// `(β0, β1, ..., βr)`.
    pub beta: DVector<f64>,
    /// `e_i = logistic(x_i' β)`.
    pub scores: DVector<f64>,
    /// `N x (r + 1)` design, row `i` is `(1, λ_i')`.
    pub design: DMatrix<f64>,
    pub treated: Vec<f64>,
    pub loglik: f64,
    /// `E_ββ = -(1/N) Σ e_i (1 - e_i) x_i x_i'` (negative definite).
    pub info_matrix: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Units whose score falls outside `[0.01, 0.99]`.
    pub extreme_units: Vec<usize>,
}

impl PropensityFit {
    pub fn n_units(&self) -> usize {
        self.design.nrows()
    }

    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    /// ATT weights: 1 for treated units, `e/(1-e)` for controls.
    pub fn att_weights(&self) -> Vec<f64> {
        att_weights(&self.treated, self.scores.as_slice())
    }
}

pub(crate) fn att_weights(z: &[f64], e: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(e)
        .map(|(&z, &e)| if z > 0.5 { 1.0 } else { e / (1.0 - e) })
        .collect()
}

/// `(1, λ')` rows.
pub fn design_matrix(loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = loadings.shape();
    DMatrix::from_fn(n, r + 1, |i, j| if j == 0 { 1.0 } else { loadings[(i, j - 1)] })
}

fn log_likelihood(design: &DMatrix<f64>, z: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter().zip(z).map(|(&h, &z)| z * h - softplus(h)).sum()
}

/// Per-observation score `x (z - e)`.
pub fn score(beta: &DVector<f64>, x: &DVector<f64>, z: f64) -> DVector<f64> {
    let e = logistic(x.dot(beta));
    x * (z - e)
}

/// Empirical `E_ββ = -(1/N) Σ e_i (1 - e_i) x_i x_i'`.
pub fn information_matrix(beta: &DVector<f64>, design: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = design.shape();
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let x = design.row(i).transpose();
        let e = logistic(x.dot(beta));
        info.ger(-e * (1.0 - e), &x, &x, 1.0);
    }
    info / n as f64
}

/// `∂S_i/∂λ'`: `J (z - e) - e (1 - e) x β_λ'`, where `J` stacks a zero row
/// on top of `I_r`.
pub fn score_loading_jacobian(beta: &DVector<f64>, lambda: &DVector<f64>, z: f64) -> DMatrix<f64> {
    let r = lambda.len();
    let x = DVector::from_fn(r + 1, |j, _| if j == 0 { 1.0 } else { lambda[j - 1] });
    let e = logistic(x.dot(beta));
    let beta_l = beta.rows(1, r);
    let mut jac = -(&x * beta_l.transpose()) * (e * (1.0 - e));
    for k in 0..r {
        jac[(k + 1, k)] += z - e;
    }
    jac
}

/// Newton–Raphson logistic MLE of `z` on `(1, Λ)`, with step halving.
pub fn fit_logistic(loadings: &DMatrix<f64>, treated: &[bool]) -> Result<PropensityFit> {
    let (n, r) = loadings.shape();
    if treated.len() != n {
        return Err(Error::Dimension {
            context: "treatment vector",
            expected: n,
            actual: treated.len(),
        });
    }
    if n <= r + 1 {
        return Err(Error::Argument(format!("need more than {} units for {} loadings, got {n}", r + 1, r)));
    }
    let n_treated = treated.iter().filter(|&&z| z).count();
    if n_treated == 0 || n_treated == n {
        return Err(Error::EstimandUndefined);
    }
    if loadings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite loadings".into()));
    }
    let z: Vec<f64> = treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let design = design_matrix(loadings);
    let p = r + 1;

    let mut beta = DVector::zeros(p);
    let mut ll = log_likelihood(&design, &z, &beta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let eta = &design * &beta;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for i in 0..n {
            let x = design.row(i).transpose();
            let e = logistic(eta[i]);
            grad.axpy(z[i] - e, &x, 1.0);
            hess.ger(e * (1.0 - e), &x, &x, 1.0);
        }
        if grad.amax() < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => return Err(separation_or_singular(&beta)),
        };
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ll = log_likelihood(&design, &z, &candidate);
        let mut halvings = 0;
        // Near the optimum the log-likelihood is flat to rounding, so allow a
        // relative slack when comparing.
        let floor = ll - 1e-13 * (1.0 + ll.abs());
        while !(cand_ll >= floor) && halvings < MAX_HALVINGS {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ll = log_likelihood(&design, &z, &candidate);
            halvings += 1;
        }
        if !(cand_ll >= floor) {
            // No ascent even at tiny steps: the likelihood is flat to rounding.
            converged = grad.amax() < 1e-6;
            break;
        }
        let improvement = cand_ll - ll;
        let delta = (step * scale).amax();
        beta = candidate;
        ll = cand_ll;

        if (beta.amax() > SEPARATION_NORM && improvement < 1e-10) || ll > -PERFECT_FIT_LOGLIK {
            return Err(separation_or_singular(&beta));
        }
        if delta < STEP_TOL {
            converged = true;
            break;
        }
    }

    if !converged {
        if beta.amax() > SEPARATION_NORM {
            return Err(separation_or_singular(&beta));
        }
        return Err(Error::NoConvergence {
            iterations,
            last_beta: beta.iter().copied().collect(),
        });
    }

    let scores = &design * &beta;
    let scores = scores.map(logistic);
    let outside: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &e)| !(e > SCORE_EPS && e < 1.0 - SCORE_EPS))
        .map(|(i, _)| i)
        .collect();
    if !outside.is_empty() {
        if ll > -PERFECT_FIT_LOGLIK * n as f64 {
            return Err(separation_or_singular(&beta));
        }
        return Err(Error::Overlap { units: outside });
    }
    let extreme_units = scores
        .iter()
        .enumerate()
        .filter(|(_, &e)| !(EXTREME_LOW..=EXTREME_HIGH).contains(&e))
        .map(|(i, _)| i)
        .collect();
    let info_matrix = information_matrix(&beta, &design);
    Ok(PropensityFit {
        beta,
        scores,
        design,
        treated: z,
        loglik: ll,
        info_matrix,
        converged,
        iterations,
        extreme_units,
    })
}

fn separation_or_singular(beta: &DVector<f64>) -> Error {
    let norm = beta.norm();
    if norm > 0.0 && norm.is_finite() {
        Error::Separation {
            direction: (beta / norm).iter().copied().collect(),
        }
    } else {
        Error::SingularInformation
    }
}

/// i.i.d.-error plug-in `Φ_i = (1/T0) Σ_t F_t F_t' ξ_it²`.
pub fn phi_i(ffit: &FactorFit, i: usize) -> Result<DMatrix<f64>> {
    let (t0, n) = ffit.residuals.shape();
    if i >= n {
        return Err(Error::Argument(format!("unit index {i} out of range for {n} units")));
    }
    let r = ffit.rank;
    let mut phi = DMatrix::zeros(r, r);
    for t in 0..t0 {
        let f = ffit.factors.row(t).transpose();
        let xi = ffit.residuals[(t, i)];
        phi.ger(xi * xi, &f, &f, 1.0);
    }
    Ok(phi / t0 as f64)
}

/// Coefficient covariance accounting for estimated loadings.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVariance {
    /// Asymptotic `V^β` of `√N (β̂ - β)`.
    pub avar: DMatrix<f64>,
    /// `sqrt(diag(V^β) / N)`.
    pub se: DVector<f64>,
}

/// Plug-in sandwich
/// `E_ββ⁻¹ (mean[S S'] + mean[∇_λS Φ_i/T0 ∇_λS']) E_ββ⁻¹`.
pub fn beta_variance(fit: &PropensityFit, ffit: &FactorFit) -> Result<BetaVariance> {
    let n = fit.n_units();
    let p = fit.n_coef();
    if ffit.rank + 1 != p || ffit.loadings.nrows() != n {
        return Err(Error::Dimension {
            context: "factor fit vs propensity design",
            expected: p,
            actual: ffit.rank + 1,
        });
    }
    if !fit.converged {
        return Err(Error::NoConvergence {
            iterations: fit.iterations,
            last_beta: fit.beta.iter().copied().collect(),
        });
    }
    let t0 = ffit.factors.nrows() as f64;
    let e_inv = symmetric_inverse(&fit.info_matrix)?;
    let mut middle = DMatrix::zeros(p, p);
    for i in 0..n {
        let x = fit.design.row(i).transpose();
        let s = score(&fit.beta, &x, fit.treated[i]);
        middle.ger(1.0, &s, &s, 1.0);
        let lambda = ffit.loadings.row(i).transpose();
        let jac = score_loading_jacobian(&fit.beta, &lambda, fit.treated[i]);
        let phi = phi_i(ffit, i)?;
        middle += &jac * phi * jac.transpose() / t0;
    }
    middle /= n as f64;
    let avar = &e_inv * middle * &e_inv;
    let se = avar.diagonal().map(|v| (v.max(0.0) / n as f64).sqrt());
    Ok(BetaVariance { avar, se })
}
