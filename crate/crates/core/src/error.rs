use thiserror::Error;

/// Errors raised by the factored policy gradient toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("action index {index} out of range for {count} action dimensions")]
    ActionOutOfRange { index: usize, count: usize },
    #[error("target index {index} out of range for {count} targets")]
    TargetOutOfRange { index: usize, count: usize },
    #[error("target {0} has no incoming edge")]
    OrphanTarget(usize),
    #[error("network needs at least one action and one target (got n={actions}, m={targets})")]
    EmptyNetwork { actions: usize, targets: usize },
    #[error("partition map: {0}")]
    InvalidPartition(String),
    #[error("factorisation: {0}")]
    InvalidFactorisation(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("exhaustive search limited to {limit} action dimensions (got {actual})")]
    OracleLimit { limit: usize, actual: usize },
    #[error("policy: {0}")]
    InvalidPolicy(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("gradient update diverged")]
    Divergence,
    #[error("target {0} lacks a finite lower bound")]
    MissingLowerBound(usize),
    #[error("need at least {required} samples (got {actual})")]
    InsufficientSamples { required: usize, actual: usize },
    #[error("graph file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
