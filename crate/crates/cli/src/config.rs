//! Run configuration: a TOML file merged with command-line overrides.
//!
//! ```toml
//! mode = "estimate"               # optional; must match the subcommand
//! panel = "prices.csv"            # wide CSV: date,<unit>,<unit>,...
//! panel_kind = "prices"           # or "returns"
//! roster = "roster.csv"           # unit_id,treated
//! treatment_date = "2016-03-31"
//! rank = 3                        # fixed rank, or
//! rank_max = 8                    # information-criterion search bound
//! bins = 20
//! out = "results"
//! seed = 0
//! falsify_dates = ["2015-03-31", "2014-03-31"]
//! freeze_rank = false
//!
//! [simulation]
//! cases = [1, 2]
//! scenarios = [1, 2, 3, 4]
//! beta = [-1.75, 0.05, 0.05, 0.05]  # replaces the scenario rows
//! n_units = 500
//! n_periods = 100
//! phi = 0.5
//! tau_att = 2.0
//! n_rep = 1000
//! fixed_design = false
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use latent_ipw::io::PanelKind;
use latent_ipw::pipeline::RankPolicy;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Estimate,
    Simulate,
    Balance,
    Falsify,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    pub panel: Option<PathBuf>,
    pub panel_kind: Option<PanelKind>,
    pub roster: Option<PathBuf>,
    pub treatment_date: Option<String>,
    pub rank: Option<usize>,
    pub rank_max: Option<usize>,
    pub bins: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub falsify_dates: Option<Vec<String>>,
    pub freeze_rank: Option<bool>,
    pub simulation: Option<SimulationSection>,
}

#[derive(Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub cases: Option<Vec<u8>>,
    pub scenarios: Option<Vec<usize>>,
    pub beta: Option<[f64; 4]>,
    pub n_units: Option<usize>,
    pub n_periods: Option<usize>,
    pub phi: Option<f64>,
    pub tau_att: Option<f64>,
    pub n_rep: Option<usize>,
    pub fixed_design: Option<bool>,
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub rank: Option<usize>,
    pub rank_max: Option<usize>,
    pub bins: Option<usize>,
    pub out: Option<PathBuf>,
    pub fixed_design: bool,
    pub freeze_rank: bool,
}

/// Where the panel comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub panel: PathBuf,
    pub kind: PanelKind,
    pub roster: PathBuf,
    pub treatment_date: String,
}

/// Validated configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub data: Option<DataConfig>,
    pub rank: RankPolicy,
    pub bins: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub falsify_dates: Vec<String>,
    pub freeze_rank: bool,
    pub simulation: SimulationSection,
    pub fixed_design: bool,
}

pub const DEFAULT_RANK_MAX: usize = 8;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

pub fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: FileConfig =
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.panel = cfg.panel.map(|p| resolve(base, p));
    cfg.roster = cfg.roster.map(|p| resolve(base, p));
    cfg.out = cfg.out.map(|p| resolve(base, p));
    Ok(cfg)
}

impl RunConfig {
    pub fn build(mode: Mode, file: FileConfig, ov: Overrides) -> Result<Self, CliError> {
        if let Some(m) = file.mode {
            if m != mode {
                return Err(config_err(format!("config mode {m:?} does not match command {mode:?}")));
            }
        }
        let rank_fixed = ov.rank.or(if ov.rank_max.is_some() { None } else { file.rank });
        let rank_max = ov.rank_max.or(if ov.rank.is_some() { None } else { file.rank_max });
        let rank = match (rank_fixed, rank_max) {
            (Some(_), Some(_)) => return Err(config_err("set either rank or rank_max, not both")),
            (Some(0), _) => return Err(config_err("rank must be at least 1")),
            (_, Some(0)) => return Err(config_err("rank_max must be at least 1")),
            (Some(r), None) => RankPolicy::Fixed(r),
            (None, Some(m)) => RankPolicy::InfoCriterion { r_max: m },
            (None, None) => RankPolicy::InfoCriterion { r_max: DEFAULT_RANK_MAX },
        };
        let bins = ov.bins.or(file.bins).unwrap_or(latent_ipw::diagnostics::DEFAULT_BINS);
        if bins < 2 {
            return Err(config_err("bins must be at least 2"));
        }
        let out = ov.out.or(file.out).ok_or_else(|| config_err("no output directory (set out or --out)"))?;

        let data = if mode == Mode::Simulate {
            None
        } else {
            let panel = file.panel.ok_or_else(|| config_err("missing panel path"))?;
            let roster = file.roster.ok_or_else(|| config_err("missing roster path"))?;
            for p in [&panel, &roster] {
                if !p.is_file() {
                    return Err(config_err(format!("input file not found: {}", p.display())));
                }
            }
            let treatment_date = file.treatment_date.ok_or_else(|| config_err("missing treatment_date"))?;
            Some(DataConfig {
                panel,
                kind: file.panel_kind.unwrap_or(PanelKind::Prices),
                roster,
                treatment_date,
            })
        };
        let falsify_dates = file.falsify_dates.unwrap_or_default();
        if mode == Mode::Falsify && falsify_dates.is_empty() {
            return Err(config_err("falsify needs at least one date in falsify_dates"));
        }
        let simulation = file.simulation.unwrap_or_default();
        if let Some(n) = simulation.n_rep {
            if n == 0 {
                return Err(config_err("simulation.n_rep must be at least 1"));
            }
        }
        Ok(Self {
            mode,
            data,
            rank,
            bins,
            out,
            seed: ov.seed.or(file.seed).unwrap_or(0),
            falsify_dates,
            freeze_rank: ov.freeze_rank || file.freeze_rank.unwrap_or(false),
            fixed_design: ov.fixed_design || simulation.fixed_design.unwrap_or(false),
            simulation,
        })
    }
}
