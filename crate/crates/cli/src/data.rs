//! Observation series: loaded from CSV or simulated from the model.

use std::path::Path;

use levy_infer::rng::SimRng;
use levy_infer::sde_euler::{propagate_unit_in_place, PropagationScratch, SdeModel};
use levy_infer::smc::ObservationMap;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ColumnKind, DataSource, ExperimentConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub values: Vec<f64>,
    pub timestamps: Option<Vec<String>>,
}

impl ObservationSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One single-coordinate observation per unit time, as the filters expect.
    pub fn as_data(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|&z| vec![z]).collect()
    }
}

/// Read `column` from a headed CSV. Prices become log-returns
/// `ln(p_i / p_{i-1})`; returns pass through.
///
/// Blank rows and non-numeric values are rejected with their 1-based line
/// number.
pub fn load_returns(
    path: &Path,
    column: &str,
    date_column: Option<&str>,
    kind: ColumnKind,
) -> Result<ObservationSeries> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_returns(&text, column, date_column, kind)
}

pub fn parse_returns(
    text: &str,
    column: &str,
    date_column: Option<&str>,
    kind: ColumnKind,
) -> Result<ObservationSeries> {
    // The csv reader silently skips empty lines; catch them first so they are
    // reported rather than ignored.
    let body = text.strip_suffix('\n').unwrap_or(text);
    let body = body.strip_suffix('\r').unwrap_or(body);
    for (i, line) in body.split('\n').enumerate() {
        if line.trim().is_empty() {
            return Err(CliError::Parse {
                line: i as u64 + 1,
                message: "blank row".into(),
            });
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Parse {
                line: 1,
                message: format!("no column named {name:?}"),
            })
    };
    let value_idx = find(column)?;
    let date_idx = date_column.map(find).transpose()?;

    let mut raw = Vec::new();
    let mut dates = date_idx.map(|_| Vec::new());
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = record.get(value_idx).unwrap_or("");
        let value: f64 = field.parse().map_err(|_| CliError::Parse {
            line,
            message: format!("{field:?} is not a number"),
        })?;
        if !value.is_finite() {
            return Err(CliError::Parse {
                line,
                message: format!("{field:?} is not finite"),
            });
        }
        if kind == ColumnKind::Prices && value <= 0.0 {
            return Err(CliError::Parse {
                line,
                message: format!("price {value} must be positive"),
            });
        }
        raw.push(value);
        if let (Some(d), Some(idx)) = (dates.as_mut(), date_idx) {
            d.push(record.get(idx).unwrap_or("").to_string());
        }
    }

    let (values, timestamps) = match kind {
        ColumnKind::Returns => (raw, dates),
        ColumnKind::Prices => {
            let r: Vec<f64> = raw.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
            (r, dates.map(|d| d.into_iter().skip(1).collect()))
        }
    };
    if values.is_empty() {
        return Err(CliError::EmptySeries);
    }
    Ok(ObservationSeries { values, timestamps })
}

/// Simulated observations plus the latent states `Y_1, …, Y_n` behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub series: ObservationSeries,
    pub latent: Vec<f64>,
}

/// Simulate `Y` at `level` from `y0` and draw `Z_i ~ N(map(Y_i), variance)`.
/// A zero variance gives noise-free observations.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic(
    model: &SdeModel,
    map: ObservationMap,
    variance: f64,
    theta: f64,
    y0: f64,
    n: usize,
    level: u32,
    rng: &mut SimRng,
) -> Result<SyntheticData> {
    if n == 0 {
        return Err(CliError::EmptySeries);
    }
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(CliError::Config(
            "noise variance must be finite and nonnegative".into(),
        ));
    }
    let params = model.levels().get(level)?;
    let sd = variance.sqrt();
    let mut scratch = PropagationScratch::default();
    let mut y = [y0];
    let mut latent = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        propagate_unit_in_place(&mut y, &[theta], params, model, rng, &mut scratch)?;
        let xi: f64 = StandardNormal.sample(rng);
        latent.push(y[0]);
        values.push(map.apply(y[0]) + sd * xi);
    }
    Ok(SyntheticData {
        series: ObservationSeries {
            values,
            timestamps: None,
        },
        latent,
    })
}

/// The series named by `config.data`.
pub fn load_series(config: &ExperimentConfig) -> Result<ObservationSeries> {
    let d = &config.data;
    match d.source {
        DataSource::Csv => {
            let path = d
                .path
                .as_deref()
                .ok_or_else(|| CliError::Config("csv data source needs data.path".into()))?;
            load_returns(path, &d.value_column, d.date_column.as_deref(), d.kind)
        }
        DataSource::Synthetic => {
            let s = &d.synthetic;
            let model = config.sde_model()?;
            let mut rng = levy_infer::rng::substream(s.seed, &[]);
            Ok(generate_synthetic(
                &model,
                config.observation.map.into(),
                config.observation.variance,
                s.theta,
                config.model.y0,
                s.n,
                s.level,
                &mut rng,
            )?
            .series)
        }
    }
}
