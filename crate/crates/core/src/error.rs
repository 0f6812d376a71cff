use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("unsupported transform: {0}")]
    UnsupportedTransform(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("manifest error at {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),
    #[error("no valid steps to accumulate")]
    EmptyAccumulation,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
