//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numeric argument lies outside the function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller-supplied data is invalid (empty calibration set, unknown layer, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// The object is in the wrong state for the requested operation.
    #[error("invalid state: {0}")]
    State(String),

    /// Configuration or command-line problem.
    #[error("config error: {0}")]
    Config(String),

    /// A checkpoint or dataset container could not be decoded.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A verified invariant does not hold.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line harness.
    ///
    /// 2: usage/config, 3: data or checkpoint, 4: invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Domain(_) => 2,
            Error::Dimension(_) | Error::State(_) | Error::Format { .. } | Error::Io { .. } => 3,
            Error::Invariant(_) => 4,
        }
    }
}
