use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to read image {path}: {reason}")]
    ImageRead { path: PathBuf, reason: String },

    #[error("failed to write image {path}: {reason}")]
    ImageWrite { path: PathBuf, reason: String },

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("loss became non-finite at iteration {iteration} (last finite loss: {last_finite:?})")]
    Diverged {
        iteration: usize,
        last_finite: Option<f64>,
    },

    #[error("external denoiser failed: {message}\n--- transcript ---\n{transcript}")]
    ExternalDenoiser { message: String, transcript: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown builtin scenario set `{0}`")]
    UnknownBuiltin(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
