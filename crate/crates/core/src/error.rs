//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by dataset synthesis, training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unreadable image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("cannot write image {path}: {reason}")]
    Encode { path: PathBuf, reason: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("model file error: {0}")]
    Model(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
