//! Error type shared by the library modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("empty waveform")]
    EmptyWaveform,

    #[error("invalid sample rate: {0}")]
    InvalidSampleRate(u32),

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimMismatch {
        context: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("NaN gradient in parameter {0}")]
    NanGradient(String),

    #[error("wav format error: {0}")]
    WavFormat(String),

    #[error("landmark parse error: {0}")]
    LandmarkParse(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn dims(context: &'static str, left: impl ToString, right: impl ToString) -> Self {
        CoreError::DimMismatch {
            context,
            left: left.to_string(),
            right: right.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
