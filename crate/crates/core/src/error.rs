use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied malformed or inconsistent data.
    #[error("invalid input: {0}")]
    Input(String),

    /// Something the process depends on (weights, files) is missing.
    #[error("environment: {0}")]
    Environment(String),

    /// Operation invoked on an object that is not ready for it.
    #[error("invalid state: {0}")]
    State(String),

    /// Non-finite values or a failed numerical routine.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// PCA could not retain the requested share of variance.
    #[error("explained variance {achieved:.6} below required {required:.4} with k = {k}")]
    Variance { achieved: f64, required: f64, k: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl ToString) -> Self {
        Error::Format {
            what,
            detail: detail.to_string(),
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Format { .. } => 2,
            Error::Numeric(_) | Error::Variance { .. } => 3,
            Error::Environment(_) | Error::State(_) | Error::Io { .. } => 1,
        }
    }
}
