use thiserror::Error;

/// Errors raised by the simulator and its numerical kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid box bounds [{lower}, {upper}]")]
    InvalidBox { lower: f64, upper: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("non-finite value produced on device {device}")]
    NonFinite { device: usize },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),

    #[error("mixing matrix is not doubly stochastic: {0}")]
    NotDoublyStochastic(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid protocol configuration: {0}")]
    Protocol(String),

    #[error("insufficient data for class {class}: need {needed}, have {available}")]
    InsufficientClassData {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
