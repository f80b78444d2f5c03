use thiserror::Error;

/// Errors surfaced by the library. Contract violations inside the tensor
/// primitives (mismatched shapes handed to a tape op) panic instead, since
/// they indicate a bug in the caller rather than bad input data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric domain error: {0}")]
    Numeric(String),

    #[error("data integrity error: {0}")]
    Data(String),

    #[error("schema error in {file} line {line}: {msg}")]
    Schema { file: String, line: u64, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("insufficient data: need at least {needed} days, got {got}")]
    InsufficientLength { needed: usize, got: usize },

    #[error("non-deterministic forward pass: {0}")]
    NonDeterministic(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
