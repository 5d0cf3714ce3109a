use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation pipeline.
#[derive(Debug, Error)]
pub enum PromiError {
    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid annotation: {0}")]
    Annotation(String),

    #[error("degenerate support set: {0}")]
    DegenerateSupport(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PromiError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PromiError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = PromiError> = std::result::Result<T, E>;
