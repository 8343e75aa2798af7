use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field contains a non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("state does not match variant {variant}: {reason}")]
    StateMismatch { variant: String, reason: String },

    #[error("velocity field is not solenoidal (max |div u| = {divergence:e})")]
    NotSolenoidal { divergence: f64 },

    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("non-finite value in `{field}` at t = {t}")]
    Blowup { field: String, t: f64 },

    #[error("step failed at t = {t}: {source}")]
    StepFailed {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("fit: {0}")]
    Fit(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("malformed snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },

    #[error("malformed csv {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failing run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGrid(_)
                | Error::InvalidParameter { .. }
                | Error::Config { .. }
                | Error::StateMismatch { .. }
                | Error::ResolutionMismatch(_)
                | Error::GridMismatch(_)
                | Error::Snapshot { .. }
                | Error::Csv { .. }
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
