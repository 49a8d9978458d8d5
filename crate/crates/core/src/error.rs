use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pilot overrun: r*s = {r}*{s} exceeds n = {n}")]
    PilotOverrun { r: usize, s: usize, n: usize },

    #[error("support has {got} indices, expected {expected}")]
    SupportSize { expected: usize, got: usize },

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("duplicate index {0} in index set")]
    DuplicateIndex(usize),

    #[error("{0} is not prime")]
    NotPrime(usize),

    #[error("degenerate support matrix: smallest singular value {smallest:e} vs largest {largest:e}")]
    DegenerateSupport { smallest: f64, largest: f64 },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no valid construction: {0}")]
    NoConstruction(String),
}
