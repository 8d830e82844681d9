//! Monte Carlo harness: block-diagonal factor DGP with AR(1) factors,
//! logistic treatment on the loadings, and RMSE / coverage aggregation.
//!
//! Every replication draws from its own ChaCha stream derived from
//! `(seed, k)`, so aggregates do not depend on how replications are
//! scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::Serialize;

use crate::att::estimate_att;
use crate::diagnostics::balance_report;
use crate::error::{Error, Result};
use crate::factor_model::{estimate_factors, PanelData};
use crate::numeric::{logistic, mean, sample_variance};
use crate::propensity::fit_logistic;

/// Number of factors in the data-generating process.
pub const DGP_FACTORS: usize = 3;
const MAX_BLOCK_REDRAWS: usize = 100;

/// Propensity coefficient rows `(β0, β1, β2, β3)` of the four balance scenarios.
pub const SCENARIO_BETAS: [[f64; 4]; 4] = [
    [-1.75, 0.5, 1.0, 2.0],
    [-1.75, 0.05, 0.5, 0.75],
    [-1.75, 0.05, 0.05, 0.75],
    [-1.75, 0.05, 0.05, 0.05],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Case {
    /// Loading scales `(1, 0.875, 0.75)`.
    Case1,
    /// Loading scales `(2.25, 2, 1.75)`.
    Case2,
}

impl Case {
    pub fn scaling(self) -> [f64; DGP_FACTORS] {
        match self {
            Case::Case1 => [1.0, 0.875, 0.75],
            Case::Case2 => [2.25, 2.0, 1.75],
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Case::Case1 => 1,
            Case::Case2 => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Case::Case1),
            2 => Ok(Case::Case2),
            _ => Err(Error::Argument(format!("unknown simulation case {n} (expected 1 or 2)"))),
        }
    }
}

/// One simulation design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimScenario {
    pub case: Case,
    /// 1-based scenario row, 0 for a custom coefficient vector.
    pub scenario: usize,
    pub beta: [f64; 4],
    pub n_units: usize,
    /// Total periods including the treatment period.
    pub n_periods: usize,
    /// Number of factors estimated.
    pub rank: usize,
    pub phi: f64,
    pub tau_att: f64,
    pub n_rep: usize,
    pub seed: u64,
    /// Hold loadings, blocks and factors fixed across replications.
    pub fixed_design: bool,
}

impl SimScenario {
    /// Scenario `1..=4` of the given case with default dimensions.
    pub fn table(case: Case, scenario: usize) -> Result<Self> {
        if !(1..=4).contains(&scenario) {
            return Err(Error::Argument(format!("scenario {scenario} outside 1..=4")));
        }
        Ok(Self {
            case,
            scenario,
            beta: SCENARIO_BETAS[scenario - 1],
            n_units: 500,
            n_periods: 100,
            rank: DGP_FACTORS,
            phi: 0.5,
            tau_att: 2.0,
            n_rep: 1000,
            seed: 0,
            fixed_design: false,
        })
    }

    pub fn with_reps(mut self, n_rep: usize) -> Self {
        self.n_rep = n_rep;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank != DGP_FACTORS {
            return Err(Error::Argument(format!(
                "simulation estimates the {DGP_FACTORS} generated factors, got rank {}",
                self.rank
            )));
        }
        if self.n_units < DGP_FACTORS + 2 {
            return Err(Error::Argument(format!("need at least {} units", DGP_FACTORS + 2)));
        }
        if self.n_periods < DGP_FACTORS + 2 {
            return Err(Error::Argument(format!("need at least {} periods", DGP_FACTORS + 2)));
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::Argument(format!("AR coefficient {} is not stationary", self.phi)));
        }
        if self.n_rep == 0 {
            return Err(Error::Argument("n_rep must be at least 1".into()));
        }
        Ok(())
    }
}

/// `T x r` AR(1) factors with unit-variance Gaussian innovations, started
/// from the stationary law.
pub fn simulate_factors<R: Rng + ?Sized>(t: usize, r: usize, phi: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(phi.abs() < 1.0) {
        return Err(Error::Argument(format!("AR coefficient {phi} is not stationary")));
    }
    let mut f = DMatrix::zeros(t, r);
    if t == 0 {
        return Ok(f);
    }
    let sd0 = (1.0 / (1.0 - phi * phi)).sqrt();
    for j in 0..r {
        let z: f64 = StandardNormal.sample(rng);
        f[(0, j)] = sd0 * z;
    }
    for s in 1..t {
        for j in 0..r {
            let eta: f64 = StandardNormal.sample(rng);
            f[(s, j)] = phi * f[(s - 1, j)] + eta;
        }
    }
    Ok(f)
}

/// Block-diagonal `N x 3` loadings: trinomial block sizes with equal
/// probabilities, one N(0,1) loading per unit on its block's factor, columns
/// scaled by the case's scaling vector.
pub fn simulate_loadings<R: Rng + ?Sized>(n: usize, case: Case, rng: &mut R) -> Result<(DMatrix<f64>, [usize; 3])> {
    if n < DGP_FACTORS {
        return Err(Error::Argument(format!("need at least {DGP_FACTORS} units, got {n}")));
    }
    let mut blocks = None;
    for _ in 0..MAX_BLOCK_REDRAWS {
        let n1 = Binomial::new(n as u64, 1.0 / 3.0).expect("valid binomial").sample(rng) as usize;
        let n2 = Binomial::new((n - n1) as u64, 0.5).expect("valid binomial").sample(rng) as usize;
        let n3 = n - n1 - n2;
        if n1 > 0 && n2 > 0 && n3 > 0 {
            blocks = Some([n1, n2, n3]);
            break;
        }
    }
    let blocks = blocks.ok_or_else(|| Error::Data(format!("empty loading block after {MAX_BLOCK_REDRAWS} draws")))?;
    let scale = case.scaling();
    let mut lambda = DMatrix::zeros(n, DGP_FACTORS);
    let mut i = 0;
    for (b, &size) in blocks.iter().enumerate() {
        for _ in 0..size {
            let z: f64 = StandardNormal.sample(rng);
            lambda[(i, b)] = scale[b] * z;
            i += 1;
        }
    }
    Ok((lambda, blocks))
}

/// Bernoulli treatment with `P(Z=1) = logistic(β0 + λ' β_{1..})`.
pub fn assign_treatment<R: Rng + ?Sized>(loadings: &DMatrix<f64>, beta: &[f64], rng: &mut R) -> Result<Vec<bool>> {
    if beta.len() != loadings.ncols() + 1 {
        return Err(Error::Dimension {
            context: "propensity coefficients",
            expected: loadings.ncols() + 1,
            actual: beta.len(),
        });
    }
    Ok((0..loadings.nrows())
        .map(|i| {
            let eta = beta[0] + (0..loadings.ncols()).map(|j| loadings[(i, j)] * beta[j + 1]).sum::<f64>();
            rng.random::<f64>() < logistic(eta)
        })
        .collect())
}

/// Noise standard deviations of the outcome equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeNoise {
    /// Idiosyncratic error `ξ`.
    pub xi_sd: f64,
    /// Unit-level effect heterogeneity `u`.
    pub u_sd: f64,
}

impl Default for OutcomeNoise {
    fn default() -> Self {
        Self { xi_sd: 1.0, u_sd: 1.0 }
    }
}

/// Outcomes `λ_i' F_t + ξ_it` for `t < T` and, at `T`, the same plus
/// `τ + u_i` for treated units. Returns `((T-1) x N, N)`.
pub fn simulate_outcomes<R: Rng + ?Sized>(
    loadings: &DMatrix<f64>,
    factors: &DMatrix<f64>,
    treated: &[bool],
    tau_att: f64,
    noise: OutcomeNoise,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, r) = loadings.shape();
    if factors.ncols() != r || treated.len() != n {
        return Err(Error::Dimension {
            context: "outcome simulation inputs",
            expected: r,
            actual: factors.ncols(),
        });
    }
    let t = factors.nrows();
    if t < 2 {
        return Err(Error::Argument("need at least 2 periods".into()));
    }
    let signal = factors * loadings.transpose();
    let mut y_pre = signal.rows(0, t - 1).into_owned();
    for v in y_pre.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *v += noise.xi_sd * e;
    }
    let mut y_final = signal.row(t - 1).transpose();
    for i in 0..n {
        let xi: f64 = StandardNormal.sample(rng);
        y_final[i] += noise.xi_sd * xi;
        if treated[i] {
            let u: f64 = StandardNormal.sample(rng);
            y_final[i] += tau_att + noise.u_sd * u;
        }
    }
    Ok((y_pre, y_final))
}

/// One simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub panel: PanelData,
    pub loadings: DMatrix<f64>,
    pub factors: DMatrix<f64>,
    pub blocks: [usize; 3],
}

fn rep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw the dataset of replication `k`.
pub fn simulate_draw(scn: &SimScenario, k: usize) -> Result<SimDraw> {
    scn.validate()?;
    let mut rng = rep_rng(scn.seed, k as u64 + 1);
    let (loadings, blocks, factors) = if scn.fixed_design {
        let mut design_rng = rep_rng(scn.seed, 0);
        let (l, b) = simulate_loadings(scn.n_units, scn.case, &mut design_rng)?;
        let f = simulate_factors(scn.n_periods, DGP_FACTORS, scn.phi, &mut design_rng)?;
        (l, b, f)
    } else {
        let (l, b) = simulate_loadings(scn.n_units, scn.case, &mut rng)?;
        let f = simulate_factors(scn.n_periods, DGP_FACTORS, scn.phi, &mut rng)?;
        (l, b, f)
    };
    let treated = assign_treatment(&loadings, &scn.beta, &mut rng)?;
    let (y_pre, y_final) = simulate_outcomes(&loadings, &factors, &treated, scn.tau_att, OutcomeNoise::default(), &mut rng)?;
    let unit_ids = (0..scn.n_units).map(|i| format!("u{i}")).collect();
    let time_labels = (1..=scn.n_periods).map(|t| t.to_string()).collect();
    let panel = PanelData::new(y_pre, y_final, treated, unit_ids, time_labels)?;
    Ok(SimDraw {
        panel,
        loadings,
        factors,
        blocks,
    })
}

/// Column permutation and signs matching estimated loadings to true ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `perm[j]` is the estimated column matched to true column `j`.
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Match estimated to true loading columns by maximal total absolute
/// correlation, then fix each sign by the sign of that correlation. PC1
/// pins the rotation but not column signs, and close eigenvalues can swap
/// the order of columns.
pub fn align_loadings(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Alignment {
    let r = truth.ncols().min(estimated.ncols());
    let cols = |m: &DMatrix<f64>, j: usize| -> Vec<f64> { m.column(j).iter().copied().collect() };
    let corr = DMatrix::from_fn(r, estimated.ncols(), |j, k| correlation(&cols(truth, j), &cols(estimated, k)));
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(estimated.ncols()) {
        let score: f64 = (0..r).map(|j| corr[(j, perm[j])].abs()).sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm));
        }
    }
    let perm: Vec<usize> = best.map(|(_, p)| p[..r].to_vec()).unwrap_or_default();
    let signs = (0..r).map(|j| if corr[(j, perm[j])] < 0.0 { -1.0 } else { 1.0 }).collect();
    Alignment { perm, signs }
}

/// Outcome of one successful replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepStats {
    pub tau_hat: f64,
    pub se: f64,
    pub covered: bool,
    /// `(1/(N r)) Σ_i Σ_j (λ̂_ij - λ_ij)²` after alignment.
    pub loading_sq_err: f64,
    /// Aligned coefficient estimates `(β̂0, ..., β̂3)`.
    pub beta_hat: [f64; 4],
    pub asd_unweighted: [f64; 3],
    pub asd_weighted: [f64; 3],
    pub treated_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub stats: Option<RepStats>,
    pub failure: Option<String>,
}

/// Simulate and estimate replication `k`; estimation failures are recorded,
/// not propagated.
pub fn run_replication(scn: &SimScenario, k: usize) -> ReplicationRecord {
    match replicate(scn, k) {
        Ok(stats) => ReplicationRecord {
            rep: k,
            stats: Some(stats),
            failure: None,
        },
        Err(e) => ReplicationRecord {
            rep: k,
            stats: None,
            failure: Some(e.to_string()),
        },
    }
}

fn replicate(scn: &SimScenario, k: usize) -> Result<RepStats> {
    let draw = simulate_draw(scn, k)?;
    let panel = &draw.panel;
    let ffit = estimate_factors(panel.y_pre(), scn.rank)?;
    let pfit = fit_logistic(&ffit.loadings, panel.treated())?;
    let att = estimate_att(panel, &ffit, &pfit)?;
    let balance = balance_report(&ffit, panel.treated(), pfit.scores.as_slice())?;

    let align = align_loadings(&ffit.loadings, &draw.loadings);
    let n = panel.n_units();
    let mut sq = 0.0;
    let mut beta_hat = [pfit.beta[0], 0.0, 0.0, 0.0];
    let mut asd_unweighted = [0.0; 3];
    let mut asd_weighted = [0.0; 3];
    for j in 0..DGP_FACTORS {
        let (col, s) = (align.perm[j], align.signs[j]);
        for i in 0..n {
            let d = s * ffit.loadings[(i, col)] - draw.loadings[(i, j)];
            sq += d * d;
        }
        beta_hat[j + 1] = s * pfit.beta[col + 1];
        asd_unweighted[j] = balance.rows[col].asd_unweighted;
        asd_weighted[j] = balance.rows[col].asd_weighted;
    }
    Ok(RepStats {
        tau_hat: att.tau_att,
        se: att.se,
        covered: att.covers(scn.tau_att),
        loading_sq_err: sq / (n * DGP_FACTORS) as f64,
        beta_hat,
        asd_unweighted,
        asd_weighted,
        treated_share: panel.n_treated() as f64 / n as f64,
    })
}

/// How replications are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing; sequential when the `parallel` feature is off.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Run `f(k)` for `k in 0..n`, results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Aggregates over the successful replications of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub scenario: SimScenario,
    pub records: Vec<ReplicationRecord>,
    pub n_failed: usize,
    pub att_rmse: f64,
    pub coverage_95: f64,
    pub loading_rmse_joint: f64,
    pub beta_rmse: [f64; 4],
    pub mean_se: f64,
    /// Sample standard deviation of `τ̂` across replications.
    pub sd_tau: f64,
    pub mean_asd_unweighted: [f64; 3],
    pub mean_asd_weighted: [f64; 3],
    pub mean_treated_share: f64,
}

impl MonteCarloResult {
    pub fn successes(&self) -> impl Iterator<Item = &RepStats> {
        self.records.iter().filter_map(|r| r.stats.as_ref())
    }
}

pub fn monte_carlo(scn: &SimScenario) -> Result<MonteCarloResult> {
    monte_carlo_with(scn, Execution::default())
}

pub fn monte_carlo_with(scn: &SimScenario, exec: Execution) -> Result<MonteCarloResult> {
    scn.validate()?;
    let records = map_indexed(scn.n_rep, exec, |k| run_replication(scn, k));
    aggregate(scn, records)
}

fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        mean(&v).sqrt()
    }
}

fn aggregate(scn: &SimScenario, records: Vec<ReplicationRecord>) -> Result<MonteCarloResult> {
    let ok: Vec<&RepStats> = records.iter().filter_map(|r| r.stats.as_ref()).collect();
    let n_failed = records.len() - ok.len();
    if ok.is_empty() {
        return Err(Error::Data(format!(
            "all {} replications failed; first failure: {}",
            records.len(),
            records.first().and_then(|r| r.failure.clone()).unwrap_or_default()
        )));
    }
    let col = |f: &dyn Fn(&RepStats) -> f64| -> Vec<f64> { ok.iter().map(|s| f(s)).collect() };
    let att_rmse = rms(ok.iter().map(|s| (s.tau_hat - scn.tau_att).powi(2)));
    let coverage_95 = mean(&col(&|s| if s.covered { 1.0 } else { 0.0 }));
    let loading_rmse_joint = rms(ok.iter().map(|s| s.loading_sq_err));
    let mut beta_rmse = [0.0; 4];
    for (j, b) in beta_rmse.iter_mut().enumerate() {
        *b = rms(ok.iter().map(|s| (s.beta_hat[j] - scn.beta[j]).powi(2)));
    }
    let mut mean_asd_unweighted = [0.0; 3];
    let mut mean_asd_weighted = [0.0; 3];
    for j in 0..3 {
        mean_asd_unweighted[j] = mean(&col(&|s| s.asd_unweighted[j]));
        mean_asd_weighted[j] = mean(&col(&|s| s.asd_weighted[j]));
    }
    Ok(MonteCarloResult {
        scenario: scn.clone(),
        n_failed,
        att_rmse,
        coverage_95,
        loading_rmse_joint,
        beta_rmse,
        mean_se: mean(&col(&|s| s.se)),
        sd_tau: sample_variance(&col(&|s| s.tau_hat)).sqrt(),
        mean_asd_unweighted,
        mean_asd_weighted,
        mean_treated_share: mean(&col(&|s| s.treated_share)),
        records,
    })
}

/// Returns panel without any treatment effect: factor-model returns over
/// `n_periods` (the last is the nominal treatment period) for `n_units`,
/// with treatment assigned on the true loadings. Used for placebo checks
/// and fixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct NullPanelDesign {
    pub n_units: usize,
    pub n_periods: usize,
    pub case: Case,
    pub beta: [f64; 4],
    pub phi: f64,
    /// Multiplier applied to the simulated returns.
    pub return_scale: f64,
}

impl Default for NullPanelDesign {
    fn default() -> Self {
        Self {
            n_units: 500,
            n_periods: 60,
            case: Case::Case1,
            beta: SCENARIO_BETAS[1],
            phi: 0.5,
            return_scale: 1.0,
        }
    }
}

/// Simulate a `n_periods x N` return matrix and treatment vector.
pub fn simulate_null_returns<R: Rng + ?Sized>(design: &NullPanelDesign, rng: &mut R) -> Result<(DMatrix<f64>, Vec<bool>)> {
    let (loadings, _) = simulate_loadings(design.n_units, design.case, rng)?;
    let factors = simulate_factors(design.n_periods, DGP_FACTORS, design.phi, rng)?;
    let treated = assign_treatment(&loadings, &design.beta, rng)?;
    let no_effect = vec![false; design.n_units];
    let (y_pre, y_last) = simulate_outcomes(&loadings, &factors, &no_effect, 0.0, OutcomeNoise::default(), rng)?;
    let mut returns = y_pre.insert_row(design.n_periods - 1, 0.0);
    returns.row_mut(design.n_periods - 1).copy_from(&y_last.transpose());
    returns *= design.return_scale;
    Ok((returns, treated))
}

/// [`simulate_null_returns`] wrapped into a standardized [`PanelData`].
pub fn simulate_null_panel<R: Rng + ?Sized>(design: &NullPanelDesign, rng: &mut R) -> Result<PanelData> {
    let (returns, treated) = simulate_null_returns(design, rng)?;
    let unit_ids = (0..design.n_units).map(|i| format!("u{i}")).collect();
    let time_labels = (1..=design.n_periods).map(|t| t.to_string()).collect();
    PanelData::from_returns(returns, treated, unit_ids, time_labels)
}
