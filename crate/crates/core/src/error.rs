use thiserror::Error;

/// Errors produced by the data-preparation and calibration stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("cannot center frame: segmentation mask is empty")]
    CannotCenter,

    #[error("ill-conditioned contact solve: normal force {fz} N below threshold {threshold} N")]
    IllConditioned { fz: f64, threshold: f64 },

    #[error("no consistent contact point: residual {residual} N·mm exceeds tolerance {tolerance} N·mm")]
    NoConsistentContact { residual: f64, tolerance: f64 },

    #[error("alignment failed after {} accepted steps: {reason}", trace.len())]
    AlignmentFailed { reason: String, trace: Vec<f64> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}
