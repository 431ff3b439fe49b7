use std::io;

use thiserror::Error;

pub type Result<T, E = MmclError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MmclError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Format(#[from] crate::data::mmf::FormatError),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MmclError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        MmclError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        MmclError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
