//! Experiment configuration, read from a TOML file.
//!
//! Every key has a default, so an empty file is a valid configuration. The
//! defaults describe the truncated stable test model `dY = θ Y dX` with
//! `c = 0.8`, `α = 0.5`, `u = 1`, observed through a Gaussian density.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use levy_infer::inference::{
    BoxRandomWalk, CorrectionOptions, LevelPmf, PmmhConfig, UnbiasedConfig,
};
use levy_infer::levy_model::{LevyMeasure, LevyTriplet, TruncatedStable};
use levy_infer::sde_euler::{Multiplicative, SdeModel};
use levy_infer::smc::{GaussianObservation, ObservationMap, Storage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: usize,
    pub replicates: usize,
    /// Write zero wall-clock times so result files depend only on the seed.
    pub deterministic: bool,
    pub measure: MeasureConfig,
    pub model: ModelConfig,
    pub observation: ObservationConfig,
    pub prior: PriorConfig,
    pub estimator: EstimatorConfig,
    pub data: DataConfig,
    pub experiment: ExperimentSection,
    pub rate_probe: RateProbeConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            replicates: 52,
            deterministic: false,
            measure: MeasureConfig::default(),
            model: ModelConfig::default(),
            observation: ObservationConfig::default(),
            prior: PriorConfig::default(),
            estimator: EstimatorConfig::default(),
            data: DataConfig::default(),
            experiment: ExperimentSection::default(),
            rate_probe: RateProbeConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// `ν(dx) = c |x|^{-1-α}` on `0 < |x| ≤ u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    pub c: f64,
    pub alpha: f64,
    pub u: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            c: 0.8,
            alpha: 0.5,
            u: 1.0,
        }
    }
}

/// `dY = θ Y dX`, where `X` has drift `drift`, Brownian variance `diffusion`
/// and the configured jump measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub y0: f64,
    pub drift: f64,
    pub diffusion: f64,
    /// Finest level any run may request.
    pub max_level: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            y0: 1.0,
            drift: 0.0,
            diffusion: 0.0,
            max_level: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Identity,
    Log,
}

impl From<MapKind> for ObservationMap {
    fn from(m: MapKind) -> Self {
        match m {
            MapKind::Identity => ObservationMap::Identity,
            MapKind::Log => ObservationMap::Log,
        }
    }
}

/// `Z | Y = y ~ N(map(y), variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub variance: f64,
    pub map: MapKind,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            variance: 0.01,
            map: MapKind::Identity,
        }
    }
}

/// Uniform prior on `[lower, upper]` with a Gaussian random-walk proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
    pub initial: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            lower: 0.05,
            upper: 0.99,
            step: 0.1,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageKind {
    Full,
    Terminal,
}

impl From<StorageKind> for Storage {
    fn from(s: StorageKind) -> Self {
        match s {
            StorageKind::Full => Storage::Full,
            StorageKind::Terminal => Storage::Terminal,
        }
    }
}

/// Functional whose posterior expectation is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// `φ(θ, y) = θ`.
    Theta,
    /// `φ(θ, y) = y_n`.
    TerminalState,
    /// `φ ≡ 1`.
    One,
}

impl PhiKind {
    pub fn eval(self, theta: &[f64], path: &[f64]) -> f64 {
        match self {
            PhiKind::Theta => theta[0],
            PhiKind::TerminalState => path[path.len() - 1],
            PhiKind::One => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub l_min: u32,
    pub l_max: u32,
    /// `p_l ∝ 2^{-p_exponent · l}`.
    pub p_exponent: f64,
    /// `N̄`, particles in the coarse chain.
    pub coarse_particles: usize,
    /// `Ñ`, particle pairs per correction.
    pub correction_particles: usize,
    /// `S`, Metropolis–Hastings iterations.
    pub iterations: usize,
    /// Defaults to a tenth of `iterations`.
    pub burn_in: Option<usize>,
    pub epsilon: f64,
    pub scale_by_repeats: bool,
    pub storage: StorageKind,
    pub phi: PhiKind,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            l_min: 1,
            l_max: 12,
            p_exponent: 1.5,
            coarse_particles: 60,
            correction_particles: 20,
            iterations: 10_000,
            burn_in: None,
            epsilon: 1e-8,
            scale_by_repeats: true,
            storage: StorageKind::Terminal,
            phi: PhiKind::Theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    /// Converted to log-returns.
    Prices,
    /// Used as is.
    Returns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    pub value_column: String,
    pub date_column: Option<String>,
    pub kind: ColumnKind,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            value_column: "close".into(),
            date_column: Some("date".into()),
            kind: ColumnKind::Prices,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Data simulated from the model itself at a fine level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub theta: f64,
    pub n: usize,
    pub level: u32,
    /// Stream for the simulated data, separate from the estimator seed.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            n: 50,
            level: 12,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Ground-truth value for MSE. Without it, MSE is taken about the
    /// replicate mean.
    pub reference: Option<f64>,
    /// Levels of the plain PMMH baselines.
    pub pmmh_levels: Vec<u32>,
    pub pmmh_particles: usize,
    pub truth_l_max: u32,
    pub truth_particles: usize,
    pub truth_iterations: usize,
    /// Chain lengths `S` visited by `sweep`.
    pub sweep_iterations: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            reference: None,
            pmmh_levels: vec![8],
            pmmh_particles: 60,
            truth_l_max: 14,
            truth_particles: 100,
            truth_iterations: 100_000,
            sweep_iterations: vec![1_000, 4_000, 16_000],
        }
    }
}

/// Strong-error regression for `dY = θ Y dX`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateProbeConfig {
    pub theta: f64,
    pub levels: Vec<u32>,
    pub draws: usize,
}

impl Default for RateProbeConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            levels: (3..=8).collect(),
            draws: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML form, as lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.estimator;
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(msg.to_string()))
            }
        };
        check(self.replicates >= 1, "replicates must be at least 1")?;
        check(self.workers >= 1, "workers must be at least 1")?;
        check(e.l_max > e.l_min, "l_max must exceed l_min")?;
        check(
            e.l_max <= self.model.max_level && self.experiment.truth_l_max <= self.model.max_level,
            "levels must not exceed model.max_level",
        )?;
        check(e.iterations >= 1, "iterations must be at least 1")?;
        check(
            e.coarse_particles >= 1 && e.correction_particles >= 1,
            "particle counts must be at least 1",
        )?;
        check(e.epsilon > 0.0, "epsilon must be positive")?;
        check(
            self.observation.variance > 0.0,
            "observation variance must be positive",
        )?;
        check(self.data.synthetic.n >= 1, "synthetic series needs n >= 1")?;
        check(
            self.data.source != DataSource::Csv || self.data.path.is_some(),
            "csv data source needs data.path",
        )?;
        // Constructing the pieces runs the library's own checks.
        self.measure()?;
        self.param_model()?;
        self.observation_model()?;
        Ok(())
    }

    pub fn measure(&self) -> Result<TruncatedStable> {
        let m = &self.measure;
        Ok(TruncatedStable::new(m.c, m.alpha, m.u)?)
    }

    pub fn sde_model(&self) -> Result<SdeModel> {
        let measure: Arc<dyn LevyMeasure> = Arc::new(self.measure()?);
        let triplet =
            LevyTriplet::new(vec![self.model.drift], vec![self.model.diffusion], measure)?;
        Ok(SdeModel::new(
            Arc::new(Multiplicative),
            triplet,
            self.model.max_level,
        )?)
    }

    pub fn observation_model(&self) -> Result<GaussianObservation> {
        Ok(GaussianObservation::new(
            self.observation.variance,
            self.observation.map.into(),
        )?)
    }

    pub fn param_model(&self) -> Result<BoxRandomWalk> {
        let p = &self.prior;
        Ok(BoxRandomWalk::new(
            vec![p.lower],
            vec![p.upper],
            vec![p.step],
        )?)
    }

    pub fn pmmh_config(&self, iterations: usize) -> PmmhConfig {
        PmmhConfig {
            iterations,
            burn_in: self.estimator.burn_in,
            epsilon: self.estimator.epsilon,
            initial_theta: self.prior.initial.map(|t| vec![t]),
            ..PmmhConfig::default()
        }
    }

    pub fn unbiased_config(&self) -> Result<UnbiasedConfig> {
        let e = &self.estimator;
        Ok(UnbiasedConfig {
            l_min: e.l_min,
            pmf: LevelPmf::geometric(e.l_min, e.l_max, e.p_exponent)?,
            coarse_particles: e.coarse_particles,
            pmmh: self.pmmh_config(e.iterations),
            correction: CorrectionOptions {
                particles: e.correction_particles,
                storage: e.storage.into(),
                scale_by_repeats: e.scale_by_repeats,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.measure.c, 0.8);
        assert_eq!(c.measure.alpha, 0.5);
        assert_eq!(c.estimator.epsilon, 1e-8);
        assert_eq!(c.estimator.p_exponent, 1.5);
        assert_eq!((c.estimator.l_min, c.estimator.l_max), (1, 12));
        assert_eq!(c.replicates, 52);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig {
            seed: 99,
            ..ExperimentConfig::default()
        };
        c.experiment.reference = Some(0.5);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("sede = 1").is_err());
        assert!(ExperimentConfig::from_toml("[estimator]\nl_min = 5\nl_max = 5").is_err());
        assert!(ExperimentConfig::from_toml("[measure]\nalpha = 2.5").is_err());
        assert!(ExperimentConfig::from_toml("[data]\nsource = \"csv\"").is_err());
    }
}
