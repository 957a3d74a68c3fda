use thiserror::Error;

/// Pipeline stage names used to tag failures.
pub const STAGES: [&str; 10] = ["synth", "sync", "track", "align", "calibrate", "train", "predict", "smooth", "eval", "io"];

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("split scheme infeasible: {0}")]
    Infeasible(String),
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage,
            message: e.to_string(),
        }
    }

    /// Stage tag for the process exit message, if the failure came from one.
    pub fn stage_tag(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Attaches a stage tag to any displayable error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: std::fmt::Display> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::stage(stage, e))
    }
}
