use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("out-of-vocab token {token} (vocab size {vocab_size})")]
    OutOfVocab { token: usize, vocab_size: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("training diverged: {0}")]
    Diverged(String),
}

pub type Result<T> = std::result::Result<T, Error>;
