use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("arity mismatch: expected {expected}, got {actual} ({what})")]
    Arity {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("empty scene: {0}")]
    EmptyScene(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("unsupported sample: {0}")]
    UnsupportedSample(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

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

    /// True for errors caused by input data rather than by the program or environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidLabel(_)
                | Error::InvalidTaxonomy(_)
                | Error::InvalidPose(_)
                | Error::EmptyScene(_)
                | Error::EmptyDataset(_)
                | Error::ManifestMismatch(_)
                | Error::UnsupportedSample(_)
                | Error::Format { .. }
                | Error::Io { .. }
                | Error::Json(_)
        )
    }
}
