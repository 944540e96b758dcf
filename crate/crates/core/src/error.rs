use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation, navigation and learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("polar singularity at latitude {latitude} rad")]
    PolarSingularity { latitude: f64 },

    #[error("segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },

    #[error("series too short: need at least {needed} samples, got {got}")]
    SeriesTooShort { needed: usize, got: usize },

    #[error("sample rate mismatch: model {model_hz} Hz, series {series_hz} Hz")]
    RateMismatch { model_hz: f64, series_hz: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("step {index} failed: {cause}")]
    StepFailed { index: usize, cause: Box<Error> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("series misaligned: {0}")]
    Misaligned(String),

    #[error("{stage}: {cause}")]
    Stage {
        stage: &'static str,
        cause: Box<Error>,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("csv {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            cause: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
