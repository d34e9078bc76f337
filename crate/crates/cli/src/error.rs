use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("series has no observations")]
    EmptySeries,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] levy_infer::Error),
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        source: Box<CliError>,
    },
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, CliError>;
