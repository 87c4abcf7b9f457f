//! Error taxonomy shared by every module.
//!
//! The split mirrors how failures are reported downstream: configuration
//! problems name the offending field, hypothesis violations name the
//! analytic precondition that failed, and numerical errors carry solver
//! diagnostics.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent scenario configuration. `path` is the
    /// JSON field path (e.g. `theta.sigma`).
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A precondition of one of the analytic results does not hold for
    /// the given data (non-Hurwitz F, rate out of range, singular Φ, ...).
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Input outside the operation's domain (point not in the set,
    /// non-symmetric matrix where symmetry is required, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iteration failed to converge or a solve broke down.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 hypothesis, 4 numerical/domain.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Hypothesis(_) => 3,
            Error::Domain(_) | Error::Numerical(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
