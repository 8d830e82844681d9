//! The three-step estimator end to end: factors, propensity score, ATT.

use crate::att::{estimate_att, AttEstimate};
use crate::diagnostics::{balance_report, overlap_report, BalanceReport, OverlapReport, DEFAULT_BINS};
use crate::error::Result;
use crate::factor_model::{estimate_factors, select_num_factors, FactorFit, IcSelection, PanelData};
use crate::propensity::{beta_variance, fit_logistic, BetaVariance, PropensityFit};

/// How the number of factors is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    Fixed(usize),
    /// Minimize `IC1`/`IC2` over `1..=r_max`, taking the smaller choice.
    InfoCriterion { r_max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub rank: RankPolicy,
    pub bins: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            rank: RankPolicy::InfoCriterion { r_max: 8 },
            bins: DEFAULT_BINS,
        }
    }
}

/// Everything produced by one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimation {
    pub ic: Option<IcSelection>,
    pub factor_fit: FactorFit,
    pub propensity: PropensityFit,
    pub beta_variance: BetaVariance,
    pub att: AttEstimate,
    pub balance: BalanceReport,
    pub overlap: OverlapReport,
}

impl Estimation {
    pub fn rank(&self) -> usize {
        self.factor_fit.rank
    }
}

/// Run factor extraction, the logistic fit, the ATT and all diagnostics.
pub fn estimate(panel: &PanelData, opts: &PipelineOptions) -> Result<Estimation> {
    let (rank, ic) = match opts.rank {
        RankPolicy::Fixed(r) => (r, None),
        RankPolicy::InfoCriterion { r_max } => {
            // Keep r_max admissible on short panels.
            let cap = panel.n_pre_periods().min(panel.n_units()).saturating_sub(1).max(1);
            let sel = select_num_factors(panel.y_pre(), r_max.min(cap))?;
            (sel.conservative(), Some(sel))
        }
    };
    let factor_fit = estimate_factors(panel.y_pre(), rank)?;
    let propensity = fit_logistic(&factor_fit.loadings, panel.treated())?;
    let beta_variance = beta_variance(&propensity, &factor_fit)?;
    let att = estimate_att(panel, &factor_fit, &propensity)?;
    let balance = balance_report(&factor_fit, panel.treated(), propensity.scores.as_slice())?;
    let overlap = overlap_report(propensity.scores.as_slice(), panel.treated(), opts.bins)?;
    Ok(Estimation {
        ic,
        factor_fit,
        propensity,
        beta_variance,
        att,
        balance,
        overlap,
    })
}
