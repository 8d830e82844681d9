//! Hájek ATT estimator and its M-estimation variance.
//!
//! The variance stacks three sets of estimating equations: the treated mean,
//! the odds-weighted control mean, and the logistic score in the estimated
//! loadings (with the first-order correction for loading estimation noise).
//! Each unit's contribution to the linearization is its influence value;
//! `Var(τ̂) = N⁻² Σ 𝓘_i²`.

use nalgebra::DVector;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::factor_model::{FactorFit, PanelData};
use crate::numeric::{pairwise_sum, symmetric_inverse};
use crate::propensity::{score, score_loading_jacobian, PropensityFit};

/// Normal critical value of the 95% interval.
pub const Z_95: f64 = 1.96;

/// Point estimates of the Hájek ATT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HajekAtt {
    /// Treated mean.
    pub tau1: f64,
    /// Odds-weighted control mean.
    pub tau0: f64,
    pub tau_att: f64,
}

/// `τ̂1 - τ̂0` with control weights `e/(1-e)`.
pub fn hajek_att(y: &[f64], treated: &[bool], e: &[f64]) -> Result<HajekAtt> {
    let n = y.len();
    for (context, len) in [("treatment vector", treated.len()), ("score vector", e.len())] {
        if len != n {
            return Err(Error::Dimension {
                context,
                expected: n,
                actual: len,
            });
        }
    }
    let n1 = treated.iter().filter(|&&z| z).count();
    if n1 == 0 || n1 == n {
        return Err(Error::EstimandUndefined);
    }
    let bad: Vec<usize> = e
        .iter()
        .enumerate()
        .filter(|(_, &p)| !(p > 0.0 && p < 1.0))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Overlap { units: bad });
    }
    let treated_y: Vec<f64> = y.iter().zip(treated).filter(|(_, &z)| z).map(|(&y, _)| y).collect();
    let tau1 = pairwise_sum(&treated_y) / n1 as f64;

    let (mut num, mut den) = (Vec::with_capacity(n - n1), Vec::with_capacity(n - n1));
    for i in 0..n {
        if !treated[i] {
            let w = e[i] / (1.0 - e[i]);
            num.push(w * y[i]);
            den.push(w);
        }
    }
    let tau0 = pairwise_sum(&num) / pairwise_sum(&den);
    Ok(HajekAtt {
        tau1,
        tau0,
        tau_att: tau1 - tau0,
    })
}

/// Per-unit influence values and the plug-in ingredients they are built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Influence {
    pub values: Vec<f64>,
    /// `mean(Z)`.
    pub eta1: f64,
    /// `mean((e/(1-e)) (Z - 1))`, negative under overlap.
    pub eta2: f64,
    /// `mean((1-Z) ∂e/∂β (Y - τ0) / (1-e)²)`.
    pub h_beta: Vec<f64>,
}

/// Influence values of the Hájek ATT.
///
/// `𝓘_i = η1⁻¹ U_i(τ1) + η2⁻¹ U_i(τ0, β) - η2⁻¹ H_β' E_ββ⁻¹ (S_i + c_i)`
/// with `c_i = (1/T0) ∂S_i/∂λ (F'F/T0)⁻¹ Σ_t F_t ξ_it`. Both `U` sums vanish
/// at the plug-in estimates.
pub fn influence_contributions(
    panel: &PanelData,
    ffit: &FactorFit,
    pfit: &PropensityFit,
    tau1: f64,
    tau0: f64,
) -> Result<Influence> {
    let n = panel.n_units();
    let r = ffit.rank;
    if ffit.loadings.nrows() != n || pfit.n_units() != n {
        return Err(Error::Dimension {
            context: "units across panel, factor fit and propensity fit",
            expected: n,
            actual: pfit.n_units(),
        });
    }
    if pfit.n_coef() != r + 1 || ffit.residuals.ncols() != n {
        return Err(Error::Dimension {
            context: "propensity coefficients vs factor rank",
            expected: r + 1,
            actual: pfit.n_coef(),
        });
    }
    let y = panel.y_final();
    let z = &pfit.treated;
    let e = &pfit.scores;
    let nf = n as f64;
    let t0 = ffit.factors.nrows() as f64;

    let eta1 = pairwise_sum(z) / nf;
    let odds: Vec<f64> = e.iter().map(|&p| p / (1.0 - p)).collect();
    let eta2_terms: Vec<f64> = (0..n).map(|i| odds[i] * (z[i] - 1.0)).collect();
    let eta2 = pairwise_sum(&eta2_terms) / nf;

    // ∂e/∂β / (1-e)² = e/(1-e) x.
    let p = r + 1;
    let mut h_beta = vec![0.0; p];
    for (j, h) in h_beta.iter_mut().enumerate() {
        let terms: Vec<f64> = (0..n)
            .map(|i| (1.0 - z[i]) * odds[i] * pfit.design[(i, j)] * (y[i] - tau0))
            .collect();
        *h = pairwise_sum(&terms) / nf;
    }
    let h = DVector::from_column_slice(&h_beta);

    let e_inv = symmetric_inverse(&pfit.info_matrix)?;
    let ftf = ffit.factors.transpose() * &ffit.factors / t0;
    let ftf_inv = symmetric_inverse(&ftf)?;
    // Projection row H' E⁻¹ shared by every unit.
    let proj = e_inv.transpose() * &h;

    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let x = pfit.design.row(i).transpose();
        let s = score(&pfit.beta, &x, z[i]);
        let lambda = ffit.loadings.row(i).transpose();
        let jac = score_loading_jacobian(&pfit.beta, &lambda, z[i]);
        let f_xi = ffit.factors.transpose() * ffit.residuals.column(i);
        let correction = jac * (&ftf_inv * f_xi) / t0;
        let u1 = z[i] * (y[i] - tau1);
        let u0 = (1.0 - z[i]) * odds[i] * (y[i] - tau0);
        let adj = proj.dot(&(s + correction));
        values.push(u1 / eta1 + u0 / eta2 - adj / eta2);
    }
    Ok(Influence {
        values,
        eta1,
        eta2,
        h_beta,
    })
}

/// Variance, standard error, 95% interval and two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttInference {
    pub variance: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

/// `Var = N⁻² Σ 𝓘_i²` and the normal-theory summaries around `tau_att`.
pub fn att_variance(influence: &[f64], tau_att: f64) -> AttInference {
    let n = influence.len() as f64;
    let sq: Vec<f64> = influence.iter().map(|v| v * v).collect();
    let variance = if sq.is_empty() { 0.0 } else { pairwise_sum(&sq) / (n * n) };
    let se = variance.sqrt();
    let p_value = if se > 0.0 {
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * std_normal.sf((tau_att / se).abs())).min(1.0)
    } else if tau_att == 0.0 {
        1.0
    } else {
        0.0
    };
    AttInference {
        variance,
        se,
        ci_low: tau_att - Z_95 * se,
        ci_high: tau_att + Z_95 * se,
        p_value,
    }
}

/// Full ATT estimate with inference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttEstimate {
    pub tau1: f64,
    pub tau0: f64,
    pub tau_att: f64,
    pub influence: Vec<f64>,
    pub variance: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub h_beta: Vec<f64>,
}

impl AttEstimate {
    pub fn t_stat(&self) -> f64 {
        self.tau_att / self.se
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Hájek ATT, influence values and inference in one pass.
pub fn estimate_att(panel: &PanelData, ffit: &FactorFit, pfit: &PropensityFit) -> Result<AttEstimate> {
    let point = hajek_att(panel.y_final().as_slice(), panel.treated(), pfit.scores.as_slice())?;
    let infl = influence_contributions(panel, ffit, pfit, point.tau1, point.tau0)?;
    let inf = att_variance(&infl.values, point.tau_att);
    Ok(AttEstimate {
        tau1: point.tau1,
        tau0: point.tau0,
        tau_att: point.tau_att,
        influence: infl.values,
        variance: inf.variance,
        se: inf.se,
        ci_low: inf.ci_low,
        ci_high: inf.ci_high,
        p_value: inf.p_value,
        eta1: infl.eta1,
        eta2: infl.eta2,
        h_beta: infl.h_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_unit_hand_example() {
        let y = [3.0, 5.0, 2.0, 4.0];
        let z = [true, true, false, false];
        let e = [0.5, 0.5, 0.2, 0.8];
        let est = hajek_att(&y, &z, &e).unwrap();
        assert_eq!(est.tau1, 4.0);
        assert!((est.tau0 - 16.5 / 4.25).abs() < 1e-12);
        assert!((est.tau_att - (4.0 - 16.5 / 4.25)).abs() < 1e-12);
        assert!((est.tau_att - 0.11765).abs() < 1e-5);
        assert_eq!(est.tau_att, est.tau1 - est.tau0);
    }

    #[test]
    fn constant_scores_give_unweighted_control_mean() {
        let est = hajek_att(&[1.0, 2.0, 4.0], &[true, false, false], &[0.3; 3]).unwrap();
        assert!((est.tau0 - 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_class_and_bad_scores_rejected() {
        assert!(matches!(
            hajek_att(&[1.0, 2.0], &[true, true], &[0.5, 0.5]),
            Err(Error::EstimandUndefined)
        ));
        match hajek_att(&[1.0, 2.0, 3.0], &[true, false, false], &[0.5, 1.0, 0.0]) {
            Err(Error::Overlap { units }) => assert_eq!(units, vec![1, 2]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_influence_gives_degenerate_interval() {
        let inf = att_variance(&[0.0; 5], 0.7);
        assert_eq!(inf.variance, 0.0);
        assert_eq!((inf.ci_low, inf.ci_high), (0.7, 0.7));
        assert_eq!(inf.p_value, 0.0);
    }

    #[test]
    fn variance_is_scaled_second_moment() {
        let infl = [1.0, -2.0, 0.5, 0.5];
        let inf = att_variance(&infl, 0.3);
        assert!((inf.variance - 5.5 / 16.0).abs() < 1e-15);
        assert!((inf.ci_high - inf.ci_low - 2.0 * 1.96 * inf.se).abs() < 1e-15);
        // |t| = 0.3 / sqrt(5.5/16) ≈ 0.5117 → p ≈ 0.6089.
        assert!((inf.p_value - 0.608_85).abs() < 1e-4);
    }
}
