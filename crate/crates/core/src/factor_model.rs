//! Panel containers and principal-components estimation of the approximate
//! factor model `Y_it = λ_i' F_t + ξ_it` under the PC1 normalization
//! (`F'F/T0 = I_r`, `Λ'Λ` diagonal with decreasing entries).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Pre-treatment outcomes, final-period outcomes and the treatment roster.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    y_pre: DMatrix<f64>,
    y_final: DVector<f64>,
    treated: Vec<bool>,
    unit_ids: Vec<String>,
    time_labels: Vec<String>,
    raw_returns: Option<DMatrix<f64>>,
}

impl PanelData {
    /// Assemble a panel from already prepared outcomes. `y_pre` is `T0 x N`,
    /// `time_labels` has `T0 + 1` entries (the last labels the final period).
    pub fn new(
        y_pre: DMatrix<f64>,
        y_final: DVector<f64>,
        treated: Vec<bool>,
        unit_ids: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let (t0, n) = y_pre.shape();
        if t0 < 2 {
            return Err(Error::Data(format!("need at least 2 pre-treatment periods, got {t0}")));
        }
        check_len("final-period outcomes", n, y_final.len())?;
        check_len("treatment vector", n, treated.len())?;
        check_len("unit ids", n, unit_ids.len())?;
        check_len("time labels", t0 + 1, time_labels.len())?;
        if let Some(idx) = y_pre.iter().position(|v| !v.is_finite()) {
            let (t, i) = (idx % t0, idx / t0);
            return Err(Error::Data(format!(
                "missing or non-finite pre-treatment outcome for unit {} at period {}",
                unit_ids[i], time_labels[t]
            )));
        }
        if let Some(i) = y_final.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "missing or non-finite final outcome for unit {}",
                unit_ids[i]
            )));
        }
        let n_treated = treated.iter().filter(|&&z| z).count();
        if n_treated == 0 || n_treated == n {
            return Err(Error::EstimandUndefined);
        }
        Ok(Self {
            y_pre,
            y_final,
            treated,
            unit_ids,
            time_labels,
            raw_returns: None,
        })
    }

    /// Build a panel from raw returns (`(T0 + 1) x N`, last row = treatment
    /// period), standardizing with [`standardize_returns`]. The raw returns
    /// are kept so the panel can be re-prepared after truncation.
    pub fn from_returns(
        returns: DMatrix<f64>,
        treated: Vec<bool>,
        unit_ids: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let prepared = standardize_returns(&returns)?;
        let t0 = prepared.nrows() - 1;
        let y_pre = prepared.rows(0, t0).into_owned();
        let y_final = prepared.row(t0).transpose();
        let mut panel = Self::new(y_pre, y_final, treated, unit_ids, time_labels)?;
        panel.raw_returns = Some(returns);
        Ok(panel)
    }

    /// Build a panel from prices (`(T0 + 2) x N`); the first row only serves
    /// as the base of the first log return.
    pub fn from_prices(
        prices: &DMatrix<f64>,
        treated: Vec<bool>,
        unit_ids: Vec<String>,
        time_labels: Vec<String>,
    ) -> Result<Self> {
        let returns = log_returns(prices)?;
        Self::from_returns(returns, treated, unit_ids, time_labels)
    }

    /// `T0 x N` pre-treatment outcomes.
    pub fn y_pre(&self) -> &DMatrix<f64> {
        &self.y_pre
    }

    pub fn y_final(&self) -> &DVector<f64> {
        &self.y_final
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_labels(&self) -> &[String] {
        &self.time_labels
    }

    /// Unstandardized returns the panel was prepared from, if any.
    pub fn raw_returns(&self) -> Option<&DMatrix<f64>> {
        self.raw_returns.as_ref()
    }

    pub fn n_units(&self) -> usize {
        self.y_pre.ncols()
    }

    pub fn n_pre_periods(&self) -> usize {
        self.y_pre.nrows()
    }

    pub fn n_treated(&self) -> usize {
        self.treated.iter().filter(|&&z| z).count()
    }

    /// Treatment indicator as 0/1 reals.
    pub fn treatment_f64(&self) -> Vec<f64> {
        self.treated.iter().map(|&z| if z { 1.0 } else { 0.0 }).collect()
    }

    /// Outcome matrix over all `T0 + 1` periods, raw returns when available.
    pub(crate) fn source_outcomes(&self) -> DMatrix<f64> {
        match &self.raw_returns {
            Some(r) => r.clone(),
            None => {
                let (t0, n) = self.y_pre.shape();
                let mut full = DMatrix::zeros(t0 + 1, n);
                full.rows_mut(0, t0).copy_from(&self.y_pre);
                full.row_mut(t0).copy_from(&self.y_final.transpose());
                full
            }
        }
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}

/// Log returns `ln p_t - ln p_{t-1}` of a `(T + 1) x N` price panel.
pub fn log_returns(prices: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, n) = prices.shape();
    if rows < 2 {
        return Err(Error::Data(format!("need at least 2 price rows, got {rows}")));
    }
    for i in 0..n {
        for t in 0..rows {
            let p = prices[(t, i)];
            if !p.is_finite() {
                return Err(Error::Data(format!("missing price for unit {i} at time index {t}")));
            }
            if p <= 0.0 {
                return Err(Error::NonPositivePrice {
                    unit: i,
                    time: t,
                    value: p,
                });
            }
        }
    }
    Ok(DMatrix::from_fn(rows - 1, n, |t, i| {
        prices[(t + 1, i)].ln() - prices[(t, i)].ln()
    }))
}

/// Z-score every column of a `(T0 + 1) x N` return panel using the mean and
/// sample standard deviation of its first `T0` rows only; the final row is
/// mapped with the same per-unit shift and scale.
pub fn standardize_returns(returns: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, n) = returns.shape();
    if rows < 3 {
        return Err(Error::Data(format!(
            "need at least 2 pre-treatment returns plus the final period, got {rows} rows"
        )));
    }
    let t0 = rows - 1;
    let mut out = DMatrix::zeros(rows, n);
    for i in 0..n {
        let col = returns.column(i);
        if let Some(t) = col.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("missing return for unit {i} at time index {t}")));
        }
        let pre: Vec<f64> = col.iter().take(t0).copied().collect();
        let m = crate::numeric::mean(&pre);
        let sd = crate::numeric::sample_variance(&pre).sqrt();
        if !(sd > 1e-12 * m.abs().max(1e-300)) || sd < f64::MIN_POSITIVE {
            return Err(Error::DegenerateSeries { unit: i });
        }
        for t in 0..rows {
            out[(t, i)] = (col[t] - m) / sd;
        }
    }
    Ok(out)
}

/// Standardized, demeaned log returns of a `(T0 + 2) x N` price panel.
pub fn prepare_returns(prices: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    standardize_returns(&log_returns(prices)?)
}

/// Principal-components estimate of the factor model.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    /// `T0 x r` factors with `F'F/T0 = I_r`.
    pub factors: DMatrix<f64>,
    /// `N x r` loadings, `Λ = Y'F/T0`.
    pub loadings: DMatrix<f64>,
    /// `T0 x N` residuals `Y - F Λ'`.
    pub residuals: DMatrix<f64>,
    pub rank: usize,
    /// Leading `r` eigenvalues of `Y Y'`, descending. `Λ'Λ = diag(eigenvalues) / T0`.
    pub eigenvalues: Vec<f64>,
    /// Set when two of the leading `r + 1` eigenvalues are (relatively) closer
    /// than `1e-10`, i.e. the columns are not well identified.
    pub near_tie: bool,
}

/// Relative eigenvalue gap below which [`FactorFit::near_tie`] is raised.
pub const EIGEN_GAP_TOL: f64 = 1e-10;

struct GramEigen {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
}

/// Eigendecomposition of `Y Y'`, sorted by descending eigenvalue.
fn gram_eigen(y: &DMatrix<f64>) -> GramEigen {
    let gram = y * y.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // Stable sort keeps ties in solver order.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(y.nrows(), order.len(), |t, j| eig.eigenvectors[(t, order[j])]);
    GramEigen { values, vectors }
}

fn check_rank(y: &DMatrix<f64>, r: usize, what: &str) -> Result<()> {
    let (t0, n) = y.shape();
    let max = t0.min(n).saturating_sub(1);
    if r == 0 || r > max {
        return Err(Error::Argument(format!("{what} = {r} outside 1..={max} for a {t0}x{n} panel")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("outcome matrix contains non-finite entries".into()));
    }
    Ok(())
}

/// Fit `r` factors to a `T0 x N` (column-demeaned) outcome matrix.
///
/// Factors are `√T0` times the leading eigenvectors of `Y Y'`; loadings are
/// `Y'F/T0`. Column signs are fixed so that the largest-magnitude loading of
/// every column is positive.
pub fn estimate_factors(y: &DMatrix<f64>, r: usize) -> Result<FactorFit> {
    check_rank(y, r, "rank")?;
    let eig = gram_eigen(y);
    Ok(fit_from_eigen(y, &eig, r))
}

fn fit_from_eigen(y: &DMatrix<f64>, eig: &GramEigen, r: usize) -> FactorFit {
    let t0 = y.nrows() as f64;
    let mut factors = eig.vectors.columns(0, r).into_owned() * t0.sqrt();
    let mut loadings = y.transpose() * &factors / t0;

    for j in 0..r {
        let col = loadings.column(j);
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            factors.column_mut(j).neg_mut();
            loadings.column_mut(j).neg_mut();
        }
    }

    let residuals = y - &factors * loadings.transpose();
    let lead = eig.values[0].abs().max(f64::MIN_POSITIVE);
    let upto = (r + 1).min(eig.values.len());
    let near_tie = eig.values[..upto]
        .windows(2)
        .any(|w| (w[0] - w[1]) / lead < EIGEN_GAP_TOL);

    FactorFit {
        factors,
        loadings,
        residuals,
        rank: r,
        eigenvalues: eig.values[..r].to_vec(),
        near_tie,
    }
}

/// One row of the information-criterion table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcRow {
    pub k: usize,
    /// Mean squared residual at rank `k`.
    pub v: f64,
    pub ic1: f64,
    pub ic2: f64,
}

/// Rank choices of the Bai–Ng `IC1` / `IC2` criteria.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcSelection {
    pub r_ic1: usize,
    pub r_ic2: usize,
    pub table: Vec<IcRow>,
}

impl IcSelection {
    /// The smaller of the two selections.
    pub fn conservative(&self) -> usize {
        self.r_ic1.min(self.r_ic2)
    }
}

/// Residual variances below this fraction of the total are treated as an
/// exact fit so that rounding noise cannot favour larger ranks.
const EXACT_FIT_FLOOR: f64 = 1e-20;

/// Select the number of factors by minimizing `IC1` and `IC2` over
/// `k = 1..=r_max`; ties go to the smaller `k`.
pub fn select_num_factors(y: &DMatrix<f64>, r_max: usize) -> Result<IcSelection> {
    check_rank(y, r_max, "r_max")?;
    let (t0, n) = y.shape();
    let (tf, nf) = (t0 as f64, n as f64);
    let nt = nf * tf;
    let eig = gram_eigen(y);

    let fit = fit_from_eigen(y, &eig, r_max);
    let total = y.norm_squared() / nt;
    let floor = (total * EXACT_FIT_FLOOR).max(f64::MIN_POSITIVE);
    let pen_scale = (nf + tf) / nt;
    let pen1 = pen_scale * (nt / (nf + tf)).ln();
    let pen2 = pen_scale * nf.min(tf).ln();

    let mut resid = y.clone();
    let mut prev_v = f64::INFINITY;
    let mut table = Vec::with_capacity(r_max);
    for k in 1..=r_max {
        let f = fit.factors.column(k - 1);
        let l = fit.loadings.column(k - 1);
        resid -= f * l.transpose();
        // Nested least squares: V is non-increasing, clamp rounding drift.
        let v = (resid.norm_squared() / nt).min(prev_v);
        prev_v = v;
        let lv = v.max(floor).ln();
        table.push(IcRow {
            k,
            v,
            ic1: lv + k as f64 * pen1,
            ic2: lv + k as f64 * pen2,
        });
    }
    let argmin = |key: fn(&IcRow) -> f64| {
        table
            .iter()
            .fold(None::<&IcRow>, |best, row| match best {
                Some(b) if key(b) <= key(row) => Some(b),
                _ => Some(row),
            })
            .map(|row| row.k)
            .unwrap_or(1)
    };
    let r_ic1 = argmin(|row| row.ic1);
    let r_ic2 = argmin(|row| row.ic2);
    Ok(IcSelection { r_ic1, r_ic2, table })
}

/// Sum of squared residuals of `Y - F Λ'`.
pub fn objective(y: &DMatrix<f64>, factors: &DMatrix<f64>, loadings: &DMatrix<f64>) -> f64 {
    (y - factors * loadings.transpose()).norm_squared()
}
