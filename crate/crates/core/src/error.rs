//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure category, used by the CLI to pick a stable exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Ingest,
    Pipeline,
    Evaluation,
    Other,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("ingest error ({path}): {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("no ground-truth mask stored for frame sequence_id {sequence_id}")]
    MissingAnnotation { sequence_id: u64 },

    #[error("no principal component: component list is empty")]
    NoPrincipal,

    #[error("fewer than two skeleton endpoints; contour fallback required")]
    FallbackRequired,

    #[error("pipeline failed at frame sequence_id {sequence_id}: {message}")]
    Pipeline { sequence_id: u64, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } => ErrorCategory::Config,
            Error::Ingest { .. } | Error::MissingAnnotation { .. } | Error::Parse { .. } => {
                ErrorCategory::Ingest
            }
            Error::Pipeline { .. } => ErrorCategory::Pipeline,
            Error::UndefinedMetric(_) => ErrorCategory::Evaluation,
            _ => ErrorCategory::Other,
        }
    }

    pub fn ingest(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
