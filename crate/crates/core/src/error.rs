use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },

    /// A modelling assumption failed on the discrete data. `label` is the
    /// assumption tag (A2, A6, ...).
    #[error("{label}: {message}")]
    Assumption { label: &'static str, message: String },

    #[error("field shape mismatch: expected {expected:?}, got {actual:?}")]
    GridMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("stability violation: dt = {dt} exceeds the stable limit {limit} ({which})")]
    Stability {
        dt: f64,
        limit: f64,
        which: &'static str,
    },

    #[error("non-finite value in {field} at t = {t}")]
    NonFinite { field: String, t: f64 },

    #[error("invariant violated at t = {t}: {message}")]
    Invariant { t: f64, message: String },

    #[error("power iteration did not converge after {iterations} iterations (last change {change:e})")]
    NotConverged { iterations: usize, change: f64 },

    #[error("{0}")]
    Domain(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Parse { .. }
            | Error::Assumption { .. }
            | Error::GridMismatch { .. }
            | Error::Domain(_) => 2,
            Error::Stability { .. }
            | Error::NonFinite { .. }
            | Error::Invariant { .. }
            | Error::NotConverged { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}
