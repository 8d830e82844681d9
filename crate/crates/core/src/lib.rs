//! Average treatment effect on the treated for panel data where treatment
//! depends on unobserved factor loadings.
//!
//! The loadings are estimated by principal components on the pre-treatment
//! outcomes, plugged into a logistic propensity model, and the ATT is a
//! Hájek-type odds-weighted contrast. Its variance accounts for both the
//! propensity fit and the loading estimation error.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod att;
pub mod diagnostics;
pub mod error;
pub mod factor_model;
pub mod io;
pub mod numeric;
pub mod pipeline;
pub mod propensity;
pub mod simulation;

pub use att::{estimate_att, hajek_att, AttEstimate};
pub use diagnostics::{balance_report, falsification_run, overlap_report, BalanceReport, OverlapReport};
pub use error::{Error, ErrorKind, Result};
pub use factor_model::{estimate_factors, select_num_factors, FactorFit, IcSelection, PanelData};
pub use io::{load_panel, PanelKind};
pub use pipeline::{estimate, Estimation, PipelineOptions, RankPolicy};
pub use propensity::{fit_logistic, PropensityFit};
pub use simulation::{monte_carlo, Case, MonteCarloResult, SimScenario};
