use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed after {} epochs: {reason}", trace.len())]
    TrainingFailed { reason: String, trace: Vec<f64> },

    #[error("model serialization: {0}")]
    Serialization(String),

    #[error(transparent)]
    Core(#[from] nailforce_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
