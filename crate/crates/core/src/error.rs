use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by problem construction, the solvers and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("perturbation basis is rank deficient: block {index} is linearly dependent on the previous blocks")]
    RankDeficientBasis { index: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("derivative check failed: directional derivative {analytic:e} vs finite difference {numeric:e} (relative error {rel_err:e})")]
    DerivativeCheck {
        analytic: f64,
        numeric: f64,
        rel_err: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver failed on every start: {0}")]
    SolverFailed(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{flag}: {message}")]
    Config { flag: String, message: String },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn config(flag: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            flag: flag.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
