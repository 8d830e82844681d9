//! Error type shared by every estimation stage.

use thiserror::Error;

/// Broad failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration.
    Argument,
    /// Malformed or inconsistent input data.
    Data,
    /// A numerical procedure failed (separation, singular matrix, ...).
    Numerical,
}

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch for {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-positive price {value} for unit {unit} at time index {time}")]
    NonPositivePrice { unit: usize, time: usize, value: f64 },

    #[error("degenerate series for unit {unit}: zero variance over the pre-treatment window")]
    DegenerateSeries { unit: usize },

    #[error("treatment vector needs at least one treated and one control unit")]
    EstimandUndefined,

    #[error("propensity scores outside (0, 1) for units {units:?}")]
    Overlap { units: Vec<usize> },

    #[error("logistic fit separated along direction {direction:?}")]
    Separation { direction: Vec<f64> },

    #[error("logistic fit did not converge after {iterations} iterations (last beta {last_beta:?})")]
    NoConvergence {
        iterations: usize,
        last_beta: Vec<f64>,
    },

    #[error("singular information matrix")]
    SingularInformation,

    #[error("balance statistic undefined: both groups are constant")]
    DegenerateBalance,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Argument(_) | Error::Dimension { .. } => ErrorKind::Argument,
            Error::Data(_)
            | Error::NonPositivePrice { .. }
            | Error::DegenerateSeries { .. }
            | Error::EstimandUndefined
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Overlap { .. }
            | Error::Separation { .. }
            | Error::NoConvergence { .. }
            | Error::SingularInformation
            | Error::DegenerateBalance => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
