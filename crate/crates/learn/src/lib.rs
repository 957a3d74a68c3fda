//! Regression models from aligned nail images to fingertip targets:
//! Gaussian processes (exact and FITC) and from-scratch neural networks
//! (CNN, fast-dropout feedforward and recurrent nets).

mod blob;
pub mod error;
pub mod gp;
pub mod neural;
pub mod predictor;

pub use error::{Error, Result};
pub use predictor::{ImageShape, LabeledSequence, PredictorConfig, PredictorModel, SequencePrediction, Standardizer};
