//! Experiment harness around `levy-infer`: configuration, data ingestion,
//! replicated runs on a worker pool and result files.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
