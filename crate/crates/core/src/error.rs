use std::path::PathBuf;

use crate::solver::SolverTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unsupported operator: {0}")]
    UnsupportedOperator(String),

    #[error("{0}")]
    Capability(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("non-finite objective at iteration {iteration}")]
    NonFinite {
        iteration: usize,
        trace: Box<SolverTrace>,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Config(_) => 1,
            Error::Training { .. } | Error::NonFinite { .. } => 2,
            Error::Shape(_)
            | Error::Parameter(_)
            | Error::UnsupportedOperator(_)
            | Error::Capability(_) => 2,
        }
    }
}
