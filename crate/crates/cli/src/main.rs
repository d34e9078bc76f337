use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use levy_infer::rng::substream;
use levy_infer_cli::config::ExperimentConfig;
use levy_infer_cli::data::{generate_synthetic, load_series};
use levy_infer_cli::experiment::{
    comparison_table, estimate_ground_truth, rate_probe, run_experiment, run_pmmh_baseline, sweep,
    ExperimentResult,
};
use levy_infer_cli::output::{write_comparison, write_json, write_replicates, write_sweep};
use levy_infer_cli::Result;

#[derive(Debug, Parser)]
#[command(
    name = "levy-infer",
    version,
    about = "Unbiased inference for Lévy-driven SDE state-space models"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the configuration file.
#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Write zero wall-clock times for byte-reproducible result files.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a synthetic observation series.
    Simulate,
    /// Plain PMMH baseline at a fixed discretization level.
    Pmmh {
        #[arg(long)]
        level: u32,
    },
    /// Replicated runs of the unbiased estimator.
    Unbiased,
    /// Ground-truth estimate at an elevated maximum level.
    Truth,
    /// MSE against cost across chain lengths.
    Sweep,
    /// Regression of the coupled strong error on the level.
    RateProbe,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(w) = common.workers {
        config.workers = w;
    }
    if let Some(o) = &common.out {
        config.output.dir = o.clone();
    }
    if let Some(r) = common.replicates {
        config.replicates = r;
    }
    config.deterministic |= common.deterministic;
    config.validate()?;
    Ok(config)
}

fn write_result(config: &ExperimentConfig, stem: &str, result: &ExperimentResult) -> Result<()> {
    let dir = &config.output.dir;
    write_replicates(&dir.join(format!("{stem}.csv")), &result.records)?;
    write_json(
        &dir.join(format!("{stem}_summary.json")),
        &serde_json::json!({
            "summary": result.summary,
            "config": config,
        }),
    )?;
    println!(
        "{stem}: mean {:.6} se {:.2e} mse {:.4e} mean steps {:.3e}",
        result.summary.mean,
        result.summary.standard_error,
        result.summary.mse,
        result.summary.mean_euler_steps
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let dir = config.output.dir.clone();
    match cli.command {
        Command::Simulate => {
            let s = &config.data.synthetic;
            let model = config.sde_model()?;
            let data = generate_synthetic(
                &model,
                config.observation.map.into(),
                config.observation.variance,
                s.theta,
                config.model.y0,
                s.n,
                s.level,
                &mut substream(config.seed, &[]),
            )?;
            let path = dir.join("synthetic.csv");
            std::fs::create_dir_all(&dir).map_err(|source| levy_infer_cli::CliError::Io {
                path: dir.clone(),
                source,
            })?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["t", "value", "latent"])?;
            for (i, (z, y)) in data.series.values.iter().zip(&data.latent).enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    levy_infer_cli::output::fmt_f64(*z),
                    levy_infer_cli::output::fmt_f64(*y),
                ])?;
            }
            w.flush().map_err(|source| levy_infer_cli::CliError::Io {
                path: path.clone(),
                source,
            })?;
            println!(
                "wrote {} observations to {}",
                data.series.len(),
                path.display()
            );
        }
        Command::Pmmh { level } => {
            let series = load_series(&config)?;
            let result = run_pmmh_baseline(&config, &series, level)?;
            write_result(&config, &format!("pmmh_l{level}"), &result)?;
        }
        Command::Unbiased => {
            let series = load_series(&config)?;
            let result = run_experiment(&config, &series)?;
            write_result(&config, "unbiased", &result)?;
        }
        Command::Truth => {
            let series = load_series(&config)?;
            let (truth, result) = estimate_ground_truth(&config, &series)?;
            write_result(&config, "truth", &result)?;
            write_json(&dir.join("truth.json"), &truth)?;
            println!("truth: {:.8} ± {:.2e}", truth.value, truth.standard_error);
        }
        Command::Sweep => {
            let series = load_series(&config)?;
            let rows = sweep(&config, &series)?;
            write_sweep(&dir.join("sweep.csv"), &rows)?;
            for r in &rows {
                println!(
                    "{:>10} S={:<8} mse {:.4e} steps {:.3e}",
                    r.method, r.iterations, r.mse, r.mean_euler_steps
                );
            }
            let table = comparison_table(&rows);
            write_comparison(&dir.join("comparison.csv"), &table)?;
            for r in &table {
                println!(
                    "S={:<8} theta_ub {:.5} mse_ub {:.4e} theta_{} {:.5} mse {:.4e} cost ratio {:.2}",
                    r.iterations, r.theta_ub, r.mse_ub, r.pmmh_method, r.theta_pmmh, r.mse_pmmh, r.cost_ratio
                );
            }
        }
        Command::RateProbe => {
            let probe = rate_probe(&config)?;
            write_json(&dir.join("rate_probe.json"), &probe)?;
            for ((l, m), se) in probe
                .levels
                .iter()
                .zip(&probe.second_moments)
                .zip(&probe.standard_errors)
            {
                println!("l={l:<3} E|dY|^2 = {m:.4e} ± {se:.1e}");
            }
            println!("log2 slope {:.3}", probe.slope);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
