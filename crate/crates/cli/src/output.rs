//! Result files. Floats are written with 17 significant digits, enough for
//! every `f64` to parse back to the same bits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::experiment::{ComparisonRow, ReplicateRecord, SweepRow};

pub const REPLICATE_HEADER: [&str; 6] = [
    "replicate",
    "estimate",
    "wall_seconds",
    "euler_steps",
    "K_hat",
    "accept_rate",
];

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn replicates_to_csv(records: &[ReplicateRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPLICATE_HEADER)?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            fmt_f64(r.estimate),
            fmt_f64(r.wall_seconds),
            r.euler_steps.to_string(),
            r.k_hat.to_string(),
            fmt_f64(r.accept_rate),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: "<buffer>".into(),
        source: e.into_error(),
    })
}

pub fn write_replicates(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    let bytes = replicates_to_csv(records)?;
    create(path)?
        .write_all(&bytes)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_replicates(path: &Path) -> Result<Vec<ReplicateRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(REPLICATE_HEADER) {
        return Err(CliError::Parse {
            line: 1,
            message: format!("unexpected header {headers:?}"),
        });
    }
    reader
        .deserialize()
        .map(|r| r.map_err(CliError::from))
        .collect()
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "method",
        "iterations",
        "mean",
        "mse",
        "mean_euler_steps",
        "mean_wall_seconds",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.iterations.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.mse),
            fmt_f64(r.mean_euler_steps),
            fmt_f64(r.mean_wall_seconds),
        ])?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The comparison in the column order `θ_ub, MSE_ub, θ_pmmh, MSE_pmmh,
/// Cost_pmmh/Cost_ub`, preceded by the chain length and baseline name.
pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "iterations",
        "pmmh_method",
        "theta_ub",
        "mse_ub",
        "theta_pmmh",
        "mse_pmmh",
        "cost_ratio",
    ])?;
    for r in rows {
        w.write_record([
            r.iterations.to_string(),
            r.pmmh_method.clone(),
            fmt_f64(r.theta_ub),
            fmt_f64(r.mse_ub),
            fmt_f64(r.theta_pmmh),
            fmt_f64(r.mse_pmmh),
            fmt_f64(r.cost_ratio),
        ])?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed JSON of `value`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    create(path)?
        .write_all(text.as_bytes())
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}
