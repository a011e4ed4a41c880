//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("embedding index {index} out of range [0, {vocab_size}) at position {position}")]
    IndexOutOfRange {
        index: usize,
        vocab_size: usize,
        position: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training set `{0}` is empty")]
    EmptyTrainingSet(String),

    #[error("vocabulary hash mismatch for `{input}`: checkpoint has {expected}, got {actual}")]
    VocabHashMismatch {
        input: String,
        expected: String,
        actual: String,
    },

    #[error("numeric divergence: {0}")]
    NumericDivergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    /// 1 = usage, 2 = data, 3 = numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 1,
            Error::NumericDivergence(_) => 3,
            _ => 2,
        }
    }
}
