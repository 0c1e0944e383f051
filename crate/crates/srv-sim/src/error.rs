//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("capacity error: footprint {needed} bytes exceeds simulated memory limit {limit}")]
    Capacity { needed: u64, limit: u64 },

    #[error("out-of-bounds access: {array}[{index}] (length {length})")]
    OutOfBounds { array: String, index: i64, length: u64 },

    #[error("store outside writable range of {array} (index {index})")]
    ReadOnlyStore { array: String, index: i64 },

    #[error("replay budget exceeded in chunk {chunk}: taint persists after {limit} replays")]
    ReplayBudgetExceeded { chunk: usize, limit: u32 },

    #[error("unsupported pattern: {0}")]
    UnsupportedPattern(String),

    #[error("no knee in latency table: max/min latency ratio below 1.5")]
    NoKnee,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
