use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("input outside codec domain: coordinate {index} = {value}, bound {bound}")]
    OutOfDomain {
        index: usize,
        value: f64,
        bound: f64,
    },

    #[error("operation only defined for the logistic environment")]
    UnsupportedEnv,

    #[error("target not in decoder image: {0}")]
    NotInImage(String),

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
