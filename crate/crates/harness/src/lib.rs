//! Orchestration and evaluation for fingertip force estimation: dataset
//! splits, error metrics, reports and the end-to-end pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod splits;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use report::EvalReport;
pub use splits::{make_splits, SplitScheme};
