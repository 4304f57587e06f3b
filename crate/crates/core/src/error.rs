use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("negative time {0}")]
    NegativeTime(f64),

    #[error("time {0} is not a grid node")]
    OffGrid(f64),

    #[error("integration failed at step {step}: non-finite state")]
    IntegrationFailure { step: usize },

    #[error("invalid control function: {0}")]
    InvalidControl(String),

    #[error("test functional has no gradient rule")]
    MissingGradientRule,

    #[error("Picard iteration diverged at iterate {iteration}")]
    PicardDivergence { iteration: usize },

    #[error("{failed} of {total} paths failed, above the 0.1% cap")]
    TooManyFailures { failed: usize, total: usize },

    #[error("estimate below Monte Carlo noise floor: {0}")]
    NoiseFloor(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
