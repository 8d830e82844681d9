//! Balance and overlap diagnostics, and the falsification (placebo date) run.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::factor_model::{FactorFit, PanelData};
use crate::numeric::{pairwise_sum, sample_variance};
use crate::pipeline::{estimate, Estimation, PipelineOptions};
use crate::propensity::att_weights;

/// Two-sided 5% critical value used to flag imbalance.
pub const ASD_THRESHOLD: f64 = 1.96;
pub const DEFAULT_BINS: usize = 20;

/// Absolute standardized difference of `values` between groups.
///
/// The numerator is the gap between weighted group means; the denominator
/// `sqrt(s1²/N1 + s0²/N0)` always uses the unweighted within-group sample
/// variances, so unit weights reproduce the two-sample t-statistic.
pub fn asd(values: &[f64], treated: &[bool], weights: &[f64]) -> Result<f64> {
    let n = values.len();
    if treated.len() != n || weights.len() != n {
        return Err(Error::Dimension {
            context: "asd inputs",
            expected: n,
            actual: treated.len().min(weights.len()),
        });
    }
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::Argument(format!("non-positive weight at unit {i}")));
    }
    let (mut g1, mut g0) = (Vec::new(), Vec::new());
    let (mut wv1, mut w1, mut wv0, mut w0) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        if treated[i] {
            g1.push(values[i]);
            wv1.push(weights[i] * values[i]);
            w1.push(weights[i]);
        } else {
            g0.push(values[i]);
            wv0.push(weights[i] * values[i]);
            w0.push(weights[i]);
        }
    }
    if g1.is_empty() || g0.is_empty() {
        return Err(Error::EstimandUndefined);
    }
    let gap = pairwise_sum(&wv1) / pairwise_sum(&w1) - pairwise_sum(&wv0) / pairwise_sum(&w0);
    let denom = (sample_variance(&g1) / g1.len() as f64 + sample_variance(&g0) / g0.len() as f64).sqrt();
    if !(denom > 0.0) {
        return Err(Error::DegenerateBalance);
    }
    Ok(gap.abs() / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    /// 1-based loading index.
    pub loading: usize,
    pub asd_unweighted: f64,
    pub asd_weighted: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub max_asd_weighted: f64,
    pub threshold: f64,
}

impl BalanceReport {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }
}

/// ASD of every loading column, unweighted and with ATT weights.
pub fn balance_report(ffit: &FactorFit, treated: &[bool], e: &[f64]) -> Result<BalanceReport> {
    let n = ffit.loadings.nrows();
    if treated.len() != n || e.len() != n {
        return Err(Error::Dimension {
            context: "balance inputs",
            expected: n,
            actual: treated.len().min(e.len()),
        });
    }
    let z: Vec<f64> = treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let w = att_weights(&z, e);
    let ones = vec![1.0; n];
    let mut rows = Vec::with_capacity(ffit.rank);
    for j in 0..ffit.rank {
        let col: Vec<f64> = ffit.loadings.column(j).iter().copied().collect();
        let asd_unweighted = asd(&col, treated, &ones)?;
        let asd_weighted = asd(&col, treated, &w)?;
        rows.push(BalanceRow {
            loading: j + 1,
            asd_unweighted,
            asd_weighted,
            flagged: asd_weighted > ASD_THRESHOLD,
        });
    }
    let max_asd_weighted = rows.iter().map(|r| r.asd_weighted).fold(0.0, f64::max);
    Ok(BalanceReport {
        rows,
        max_asd_weighted,
        threshold: ASD_THRESHOLD,
    })
}

/// Histogram of propensity scores by treatment group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub edges: Vec<f64>,
    pub treated_counts: Vec<usize>,
    pub control_counts: Vec<usize>,
    pub treated_min: f64,
    pub treated_max: f64,
    pub control_min: f64,
    pub control_max: f64,
}

/// Equal-width bins over `[0, 1.0001 max(e)]`.
pub fn overlap_report(e: &[f64], treated: &[bool], n_bins: usize) -> Result<OverlapReport> {
    if n_bins < 2 {
        return Err(Error::Argument(format!("need at least 2 bins, got {n_bins}")));
    }
    if treated.len() != e.len() {
        return Err(Error::Dimension {
            context: "overlap inputs",
            expected: e.len(),
            actual: treated.len(),
        });
    }
    let top = e.iter().copied().fold(0.0, f64::max) * 1.0001;
    let top = if top > 0.0 { top } else { 1.0 };
    let width = top / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|k| k as f64 * width).collect();
    let mut treated_counts = vec![0; n_bins];
    let mut control_counts = vec![0; n_bins];
    let (mut t_min, mut t_max, mut c_min, mut c_max) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&p, &z) in e.iter().zip(treated) {
        let bin = ((p / width).floor().max(0.0) as usize).min(n_bins - 1);
        if z {
            treated_counts[bin] += 1;
            t_min = t_min.min(p);
            t_max = t_max.max(p);
        } else {
            control_counts[bin] += 1;
            c_min = c_min.min(p);
            c_max = c_max.max(p);
        }
    }
    Ok(OverlapReport {
        edges,
        treated_counts,
        control_counts,
        treated_min: t_min,
        treated_max: t_max,
        control_min: c_min,
        control_max: c_max,
    })
}

/// Placebo analysis at an earlier date.
#[derive(Debug, Clone, PartialEq)]
pub struct FalsificationResult {
    /// 1-based period index used as the fictitious treatment date.
    pub period_index: usize,
    pub period_label: String,
    pub estimation: Estimation,
}

/// Re-run the full analysis as if treatment happened at period
/// `fictitious_index` (1-based over the `T0 + 1` outcome periods), using
/// only the periods before it and the same treatment roster.
///
/// Passing `T0 + 1` reproduces the main analysis.
pub fn falsification_run(
    panel: &PanelData,
    fictitious_index: usize,
    opts: &PipelineOptions,
) -> Result<FalsificationResult> {
    let periods = panel.n_pre_periods() + 1;
    if fictitious_index < 3 || fictitious_index > periods {
        return Err(Error::Argument(format!(
            "fictitious period index {fictitious_index} outside 3..={periods} (needs at least 2 earlier periods)"
        )));
    }
    let source = panel.source_outcomes();
    let truncated = source.rows(0, fictitious_index).into_owned();
    let labels = panel.time_labels()[..fictitious_index].to_vec();
    let sub = PanelData::from_returns(truncated, panel.treated().to_vec(), panel.unit_ids().to_vec(), labels)?;
    let estimation = estimate(&sub, opts)?;
    Ok(FalsificationResult {
        period_index: fictitious_index,
        period_label: panel.time_labels()[fictitious_index - 1].clone(),
        estimation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asd_hand_value() {
        let v = [1.0, 3.0, 2.0, 6.0];
        let z = [true, true, false, false];
        let got = asd(&v, &z, &[1.0; 4]).unwrap();
        assert!((got - 2.0 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn asd_zero_for_equal_means() {
        let v = [1.0, 3.0, 0.0, 4.0];
        assert_eq!(asd(&v, &[true, true, false, false], &[1.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn asd_unit_weights_match_t_statistic() {
        let v = [0.3, -1.2, 2.5, 0.7, 1.1, -0.4, 0.9];
        let z = [true, false, true, false, false, true, false];
        let (a, b): (Vec<f64>, Vec<f64>) = (
            v.iter().zip(&z).filter(|(_, &t)| t).map(|(&x, _)| x).collect(),
            v.iter().zip(&z).filter(|(_, &t)| !t).map(|(&x, _)| x).collect(),
        );
        let m = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let var = |xs: &[f64]| {
            let mu = m(xs);
            xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let t = (m(&a) - m(&b)) / (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt();
        assert!((asd(&v, &z, &[1.0; 7]).unwrap() - t.abs()).abs() < 1e-12);
    }

    #[test]
    fn asd_degenerate_groups() {
        let r = asd(&[1.0, 1.0, 2.0, 2.0], &[true, true, false, false], &[1.0; 4]);
        assert!(matches!(r, Err(Error::DegenerateBalance)));
    }

    #[test]
    fn asd_weighted_numerator_invariant_to_group_scale() {
        let v = [0.1, 0.5, -0.3, 0.8, 1.4];
        let z = [true, true, false, false, false];
        let w = [1.0, 1.0, 0.2, 0.5, 3.0];
        let w2: Vec<f64> = w.iter().zip(&z).map(|(&w, &t)| if t { w } else { 7.0 * w }).collect();
        let a = asd(&v, &z, &w).unwrap();
        let b = asd(&v, &z, &w2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn overlap_constant_scores_single_bin() {
        let e = [0.3; 6];
        let z = [true, false, true, false, false, false];
        let rep = overlap_report(&e, &z, 10).unwrap();
        assert_eq!(rep.treated_counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(rep.control_counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(rep.treated_counts.iter().sum::<usize>(), 2);
        assert_eq!(rep.control_counts.iter().sum::<usize>(), 4);
        assert!(rep.edges.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(overlap_report(&e, &z, 1), Err(Error::Argument(_))));
    }
}
