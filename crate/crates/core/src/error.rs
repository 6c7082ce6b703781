use thiserror::Error;

pub type Result<T> = std::result::Result<T, PfeError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptySet(&'static str),

    #[error("train-mode batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl PfeError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        PfeError::Validation(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        PfeError::Parse {
            offset,
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for PfeError {
    fn from(e: std::io::Error) -> Self {
        PfeError::Io(e.to_string())
    }
}
