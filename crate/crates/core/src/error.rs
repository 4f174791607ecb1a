use thiserror::Error;

/// Errors raised by the estimation toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("fleet must contain at least two robots, got {0}")]
    FleetTooSmall(usize),

    #[error("fleet size mismatch: expected {expected}, got {actual}")]
    FleetSizeMismatch { expected: usize, actual: usize },

    #[error("robot index {index} out of range for fleet of {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("observer and target are the same robot ({0})")]
    SelfMeasurement(usize),

    #[error("duplicate measurement pair ({observer}, {target})")]
    DuplicatePair { observer: usize, target: usize },

    #[error("measurement set is empty")]
    EmptyMeasurementSet,

    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance is not symmetric positive semi-definite: {0}")]
    NotPsd(String),

    #[error("innovation covariance is not invertible")]
    SingularInnovation,

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("ideal filter requires ground truth")]
    MissingTruth,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty matrix")]
    EmptyMatrix,
}

pub type Result<T> = std::result::Result<T, Error>;
