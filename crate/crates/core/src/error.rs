use thiserror::Error;

/// Errors raised by the simulator and the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene must contain at least one user")]
    EmptyScene,

    #[error("could not place user {user} after {attempts} attempts")]
    PlacementFailed { user: usize, attempts: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("active set of {size} users exceeds the exhaustive limit of {limit}; use subset sampling")]
    ActiveSetTooLarge { size: usize, limit: usize },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("thread pool error: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, Error>;
