use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("non-uniform sampling: {0}")]
    Sampling(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient beats: found {found} R peaks, need at least 2")]
    InsufficientBeats { found: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss at example {example}")]
    NonFinite { example: usize },

    #[error("both classes required: {0}")]
    SingleClass(&'static str),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint integrity: {0}")]
    CheckpointIntegrity(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by the numerical state of a model rather than by its inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
