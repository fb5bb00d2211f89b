use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes (or payload widths) do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller-supplied value is outside its valid domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// An API was used out of order or against its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward op produced NaN or an infinity.
    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("numeric failure in {phase} at epoch {epoch}: {detail}")]
    Numeric {
        phase: String,
        epoch: usize,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for this error category: 2 usage/config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } | Error::NonFinite(_) => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}
