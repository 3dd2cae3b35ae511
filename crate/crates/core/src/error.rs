use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's domain (empty batch, NaN, bad order, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Training produced a non-finite loss; `record` is the offending epoch's log line.
    #[error("non-finite loss at epoch {epoch}: {record}")]
    NonFinite { epoch: usize, record: String },

    /// A numerical oracle failed its own convergence check.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// Invalid experiment or training configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A run directory is missing an expected artifact.
    #[error("missing artifact {path}")]
    MissingArtifact { path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
