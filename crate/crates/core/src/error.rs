//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad wav file {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },

    #[error("signal too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("clean signal has zero power, SNR is undefined")]
    SilentSignal,

    #[error("babble needs exactly 6 source signals, got {got}")]
    BabbleSources { got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("model error: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn wav(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Wav {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
