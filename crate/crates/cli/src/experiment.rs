//! Replicated runs of the unbiased estimator and of plain PMMH, ground-truth
//! estimation, cost sweeps and the strong-rate probe.
//!
//! Replicate `r` draws from `StreamKey(seed).child(r)`, and correction task
//! `k` inside it from `.child(r).child(k)`. Results therefore do not depend on
//! the worker count.

use std::sync::Arc;
use std::time::Instant;

use levy_infer::diagnostics::{mean_and_variance, ols};
use levy_infer::inference::{pmmh_run, run_unbiased, PfEvidence};
use levy_infer::rng::{substream, StreamKey};
use levy_infer::sde_euler::{propagate_unit_coupled_in_place, PropagationScratch};
use levy_infer::smc::HmmSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::ObservationSeries;
use crate::error::{CliError, Result};

/// One row of the replicate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimate: f64,
    pub wall_seconds: f64,
    pub euler_steps: u64,
    #[serde(rename = "K_hat")]
    pub k_hat: usize,
    pub accept_rate: f64,
}

/// Replicate mean, spread and cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub replicates: usize,
    pub mean: f64,
    /// Standard error of the replicate mean.
    pub standard_error: f64,
    pub reference: Option<f64>,
    /// Mean squared error about `reference`, or about the replicate mean
    /// when no reference is configured.
    pub mse: f64,
    pub total_euler_steps: u64,
    pub mean_euler_steps: f64,
    pub total_wall_seconds: f64,
    pub config_hash: String,
}

impl Summary {
    pub fn from_records(
        method: &str,
        records: &[ReplicateRecord],
        reference: Option<f64>,
        config_hash: String,
    ) -> Self {
        let xs: Vec<f64> = records.iter().map(|r| r.estimate).collect();
        let (mean, var) = mean_and_variance(&xs);
        let r = records.len();
        let centre = reference.unwrap_or(mean);
        let mse = xs.iter().map(|x| (x - centre).powi(2)).sum::<f64>() / r as f64;
        let total_euler_steps = records.iter().map(|r| r.euler_steps).sum();
        Self {
            method: method.to_string(),
            replicates: r,
            mean,
            standard_error: if r > 1 { (var / r as f64).sqrt() } else { 0.0 },
            reference,
            mse,
            total_euler_steps,
            mean_euler_steps: total_euler_steps as f64 / r as f64,
            total_wall_seconds: records.iter().map(|r| r.wall_seconds).sum(),
            config_hash,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<ReplicateRecord>,
    pub summary: Summary,
}

pub fn build_hmm(config: &ExperimentConfig, series: &ObservationSeries) -> Result<HmmSpec> {
    if series.is_empty() {
        return Err(CliError::EmptySeries);
    }
    Ok(HmmSpec::new(
        Arc::new(config.sde_model()?),
        Arc::new(config.observation_model()?),
        series.as_data(),
        vec![config.model.y0],
    )?)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?)
}

fn tag(replicate: usize) -> impl Fn(CliError) -> CliError {
    move |e| CliError::Replicate {
        replicate,
        source: Box::new(e),
    }
}

/// `config.replicates` independent runs of the unbiased estimator.
pub fn run_experiment(
    config: &ExperimentConfig,
    series: &ObservationSeries,
) -> Result<ExperimentResult> {
    let hmm = build_hmm(config, series)?;
    let param = config.param_model()?;
    let ub = config.unbiased_config()?;
    let phi_kind = config.estimator.phi;
    let phi = move |t: &[f64], p: &[f64]| phi_kind.eval(t, p);
    let root = StreamKey::new(config.seed);
    let records = pool(config.workers)?.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let run = run_unbiased(&hmm, &param, &ub, &root.child(r as u64), &phi)
                    .map_err(|e| tag(r)(e.into()))?;
                Ok(ReplicateRecord {
                    replicate: r,
                    estimate: run.estimate.value,
                    wall_seconds: if config.deterministic {
                        0.0
                    } else {
                        run.estimate.wall_seconds
                    },
                    euler_steps: run.estimate.euler_steps(),
                    k_hat: run.distinct_states,
                    accept_rate: run.accept_rate,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = Summary::from_records(
        "unbiased",
        &records,
        config.experiment.reference,
        config.hash(),
    );
    Ok(ExperimentResult { records, summary })
}

/// `config.replicates` independent PMMH chains at a fixed `level` with
/// `config.estimator.iterations` iterations, reporting the chain average of
/// the self-normalized estimate of `φ`.
pub fn run_pmmh_baseline(
    config: &ExperimentConfig,
    series: &ObservationSeries,
    level: u32,
) -> Result<ExperimentResult> {
    run_pmmh_replicates(config, series, level, config.estimator.iterations)
}

fn run_pmmh_replicates(
    config: &ExperimentConfig,
    series: &ObservationSeries,
    level: u32,
    iterations: usize,
) -> Result<ExperimentResult> {
    let hmm = build_hmm(config, series)?;
    let param = config.param_model()?;
    let pmmh = config.pmmh_config(iterations);
    let phi_kind = config.estimator.phi;
    let estimator = PfEvidence {
        hmm: &hmm,
        level,
        particles: config.experiment.pmmh_particles,
        storage: config.estimator.storage.into(),
    };
    // PMMH replicates use a separate branch of the key tree from the
    // unbiased ones, so both can share a seed.
    let root = StreamKey::new(config.seed).child(u64::MAX - level as u64);
    let records = pool(config.workers)?.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let start = Instant::now();
                let mut rng = root.child(r as u64).rng();
                let record =
                    pmmh_run(&estimator, &param, &pmmh, &mut rng).map_err(|e| tag(r)(e.into()))?;
                let estimate = record.posterior_expectation(&|t, p| phi_kind.eval(t, p));
                Ok(ReplicateRecord {
                    replicate: r,
                    estimate,
                    wall_seconds: if config.deterministic {
                        0.0
                    } else {
                        start.elapsed().as_secs_f64()
                    },
                    euler_steps: record.steps,
                    k_hat: record.distinct(),
                    accept_rate: record.accept_rate(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = Summary::from_records(
        &format!("pmmh_l{level}"),
        &records,
        config.experiment.reference,
        config.hash(),
    );
    Ok(ExperimentResult { records, summary })
}

/// Reference value with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub value: f64,
    pub standard_error: f64,
    pub replicates: usize,
    pub l_max: u32,
}

/// Mean of `config.replicates` unbiased runs at the elevated
/// `experiment.truth_l_max`, with `truth_particles` coarse particles and
/// `truth_iterations` iterations.
pub fn estimate_ground_truth(
    config: &ExperimentConfig,
    series: &ObservationSeries,
) -> Result<(GroundTruth, ExperimentResult)> {
    let mut c = config.clone();
    c.estimator.l_max = config.experiment.truth_l_max;
    c.estimator.coarse_particles = config.experiment.truth_particles;
    c.estimator.iterations = config.experiment.truth_iterations;
    c.validate()?;
    let result = run_experiment(&c, series)?;
    let truth = GroundTruth {
        value: result.summary.mean,
        standard_error: result.summary.standard_error,
        replicates: result.summary.replicates,
        l_max: c.estimator.l_max,
    };
    Ok((truth, result))
}

/// One point of the MSE-against-cost curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub iterations: usize,
    pub mean: f64,
    pub mse: f64,
    pub mean_euler_steps: f64,
    pub mean_wall_seconds: f64,
}

impl SweepRow {
    fn from_summary(s: &Summary, iterations: usize) -> Self {
        Self {
            method: s.method.clone(),
            iterations,
            mean: s.mean,
            mse: s.mse,
            mean_euler_steps: s.mean_euler_steps,
            mean_wall_seconds: s.total_wall_seconds / s.replicates as f64,
        }
    }
}

/// Unbiased and PMMH replicates at each chain length in
/// `experiment.sweep_iterations`.
pub fn sweep(config: &ExperimentConfig, series: &ObservationSeries) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &s in &config.experiment.sweep_iterations {
        let mut c = config.clone();
        c.estimator.iterations = s;
        let ub = run_experiment(&c, series)?;
        rows.push(SweepRow::from_summary(&ub.summary, s));
        for &level in &config.experiment.pmmh_levels {
            let p = run_pmmh_replicates(&c, series, level, s)?;
            rows.push(SweepRow::from_summary(&p.summary, s));
        }
    }
    Ok(rows)
}

/// One row of the unbiased-against-PMMH comparison: both estimates of `θ`,
/// both MSEs and the ratio `Cost_pmmh / Cost_ub` in Euler steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub iterations: usize,
    pub pmmh_method: String,
    pub theta_ub: f64,
    pub mse_ub: f64,
    pub theta_pmmh: f64,
    pub mse_pmmh: f64,
    pub cost_ratio: f64,
}

/// Pair each PMMH row of a sweep with the unbiased row at the same chain
/// length.
pub fn comparison_table(rows: &[SweepRow]) -> Vec<ComparisonRow> {
    let mut out = Vec::new();
    for ub in rows.iter().filter(|r| r.method == "unbiased") {
        for p in rows
            .iter()
            .filter(|r| r.method != "unbiased" && r.iterations == ub.iterations)
        {
            out.push(ComparisonRow {
                iterations: ub.iterations,
                pmmh_method: p.method.clone(),
                theta_ub: ub.mean,
                mse_ub: ub.mse,
                theta_pmmh: p.mean,
                mse_pmmh: p.mse,
                cost_ratio: p.mean_euler_steps / ub.mean_euler_steps,
            });
        }
    }
    out
}

/// Coupled second moments `E|Y₁^l − Y₁^{l−1}|²` and their log₂ regression
/// slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProbe {
    pub levels: Vec<u32>,
    pub second_moments: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub slope: f64,
}

pub fn rate_probe(config: &ExperimentConfig) -> Result<RateProbe> {
    let model = config.sde_model()?;
    let rp = &config.rate_probe;
    if rp.levels.len() < 2 || rp.levels.contains(&0) || rp.draws < 2 {
        return Err(CliError::Config(
            "rate probe needs at least two levels >= 1 and two draws".into(),
        ));
    }
    let y0 = config.model.y0;
    let per_level = pool(config.workers)?.install(|| {
        rp.levels
            .par_iter()
            .map(|&l| {
                let (f, c) = model.levels().pair(l)?;
                let mut rng = substream(config.seed, &[l as u64]);
                let mut scratch = PropagationScratch::default();
                let mut sq = Vec::with_capacity(rp.draws);
                for _ in 0..rp.draws {
                    let (mut a, mut b) = ([y0], [y0]);
                    propagate_unit_coupled_in_place(
                        &mut a,
                        &mut b,
                        &[rp.theta],
                        f,
                        c,
                        &model,
                        &mut rng,
                        &mut scratch,
                    )?;
                    sq.push((a[0] - b[0]).powi(2));
                }
                let (m, v) = mean_and_variance(&sq);
                Ok((m, (v / rp.draws as f64).sqrt()))
            })
            .collect::<std::result::Result<Vec<_>, levy_infer::Error>>()
    })?;
    let x: Vec<f64> = rp.levels.iter().map(|&l| l as f64).collect();
    let y: Vec<f64> = per_level.iter().map(|(m, _)| m.log2()).collect();
    Ok(RateProbe {
        levels: rp.levels.clone(),
        second_moments: per_level.iter().map(|p| p.0).collect(),
        standard_errors: per_level.iter().map(|p| p.1).collect(),
        slope: ols(&x, &y).0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(r: usize, x: f64) -> ReplicateRecord {
        ReplicateRecord {
            replicate: r,
            estimate: x,
            wall_seconds: 0.0,
            euler_steps: 10 + r as u64,
            k_hat: 1,
            accept_rate: 0.5,
        }
    }

    #[test]
    fn mse_about_own_mean_is_biased_variance() {
        let recs: Vec<_> = [1.0, 2.0, 4.0, 7.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| record(i, x))
            .collect();
        let s = Summary::from_records("unbiased", &recs, None, String::new());
        let m = 3.5;
        let biased = [1.0f64, 2.0, 4.0, 7.0]
            .iter()
            .map(|x| (x - m) * (x - m))
            .sum::<f64>()
            / 4.0;
        assert!((s.mean - m).abs() < 1e-15);
        assert!((s.mse - biased).abs() < 1e-15);
        assert_eq!(s.total_euler_steps, 10 + 11 + 12 + 13);
        let with_ref = Summary::from_records("unbiased", &recs, Some(3.0), String::new());
        assert!((with_ref.mse - (biased + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn single_replicate_has_zero_standard_error() {
        let s = Summary::from_records("unbiased", &[record(0, 0.7)], None, String::new());
        assert_eq!(s.standard_error, 0.0);
        assert_eq!(s.mse, 0.0);
    }
}
