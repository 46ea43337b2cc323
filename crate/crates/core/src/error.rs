use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
    Gate,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed delimited file {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}, column `{column}`: {message}")]
    Cell {
        line: u64,
        column: String,
        message: String,
    },

    #[error("invalid role declaration: {0}")]
    Roles(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in parameter block `{block}` at iteration {iteration}")]
    NonFinite { block: &'static str, iteration: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("perfect separation detected ({0}); refit with a positive l2 penalty")]
    Separation(String),

    #[error("posterior predictive check failed: mean p-value {mean_p:.4} is not above tau = {tau}")]
    GateFailed { mean_p: f64, tau: f64 },

    #[error("no posterior predictive check result is available; run the check or override the gate")]
    GateMissing,

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorCategory::Usage,
            Error::Io { .. }
            | Error::Csv { .. }
            | Error::MissingColumn(_)
            | Error::Cell { .. }
            | Error::Roles(_)
            | Error::Shape(_)
            | Error::Format(_) => ErrorCategory::Data,
            Error::NonFinite { .. } | Error::Numerical(_) | Error::Separation(_) => {
                ErrorCategory::Numerical
            }
            Error::GateFailed { .. } | Error::GateMissing => ErrorCategory::Gate,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
