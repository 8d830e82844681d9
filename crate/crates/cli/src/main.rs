use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latent_ipw::ErrorKind;
use thiserror::Error;

mod commands;
mod config;

use config::{FileConfig, Mode, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Core {
        stage: &'static str,
        source: latent_ipw::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn class(&self) -> (&'static str, u8) {
        match self {
            CliError::Config(_) => ("config", 2),
            CliError::Core { source, .. } => match source.kind() {
                ErrorKind::Argument => ("config", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numerical => ("numerical", 4),
            },
            CliError::Output { .. } => ("data", 3),
        }
    }
}

/// Propensity-weighted ATT estimation with latent factor loadings.
#[derive(Debug, Parser)]
#[command(name = "latent-ipw", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the ATT with inference and diagnostics.
    Estimate(Common),
    /// Run Monte Carlo scenarios.
    Simulate(Common),
    /// Balance and overlap diagnostics only.
    Balance(Common),
    /// Placebo estimates at earlier dates.
    Falsify(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed number of factors.
    #[arg(long, conflicts_with = "rank_max")]
    rank: Option<usize>,
    /// Upper bound of the information-criterion search.
    #[arg(long)]
    rank_max: Option<usize>,
    /// Histogram bins of the overlap report.
    #[arg(long)]
    bins: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hold loadings and factors fixed across replications.
    #[arg(long)]
    fixed_design: bool,
    /// Reuse the full-sample rank at every falsification date.
    #[arg(long)]
    freeze_rank: bool,
}

fn build(mode: Mode, c: Common) -> Result<RunConfig, CliError> {
    let file = match &c.config {
        Some(p) => config::read_file(p)?,
        None => FileConfig::default(),
    };
    let ov = Overrides {
        seed: c.seed,
        rank: c.rank,
        rank_max: c.rank_max,
        bins: c.bins,
        out: c.out,
        fixed_design: c.fixed_design,
        freeze_rank: c.freeze_rank,
    };
    RunConfig::build(mode, file, ov)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Estimate(c) => (Mode::Estimate, c),
        Command::Simulate(c) => (Mode::Simulate, c),
        Command::Balance(c) => (Mode::Balance, c),
        Command::Falsify(c) => (Mode::Falsify, c),
    };
    match build(mode, common).and_then(|cfg| commands::run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = e.class();
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{class}]: {msg}");
            ExitCode::from(code)
        }
    }
}
