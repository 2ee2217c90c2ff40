//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dag contains a cycle involving vertex {0}")]
    CycleDetected(usize),

    #[error("dag must have exactly one source and one sink: {0}")]
    NotSingleSourceSink(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("edge ({src}, {dst}) references unknown vertex")]
    DanglingEdge { src: usize, dst: usize },

    #[error("edge ({src}, {dst}) has no derivative of order {order}")]
    MissingOrder { src: usize, dst: usize, order: u32 },

    #[error("tensor shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("chain must contain at least one factor")]
    EmptyChain,

    #[error("chain structure violation: {0}")]
    StructureViolation(String),

    #[error("free index {index} out of range for order {order}")]
    BadFreeIndex { index: u32, order: u32 },

    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("ensemble instance invalid: {0}")]
    BadInstance(String),

    #[error("schedule invalid: {0}")]
    BadSchedule(String),

    #[error("dangling reference: {0}")]
    DanglingRef(String),

    #[error("atom resolution failed: {0}")]
    AtomResolution(String),

    #[error("entry {0} is not squarefree over the prime universe")]
    NonSquarefreeEntry(String),

    #[error("entry {0} has a factor outside the prime universe (remainder {1})")]
    UnknownPrimeFactor(String, String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("invalid input: {0}")]
    InvalidFormat(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
