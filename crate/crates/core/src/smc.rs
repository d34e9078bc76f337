//! Particle filters over the Euler-discretized hidden Markov model.
//!
//! The latent chain moves one unit of time per observation through
//! [`propagate_unit_in_place`] and is weighted by the potential
//! `G_k^θ(y) = g_θ(y, z_k)`. Three estimators live here:
//!
//! * [`particle_filter`]: bootstrap filter at a single level. `Σ V^i` estimates
//!   the unnormalized smoother mass `γ_n^{(θ,l)}(1)` without bias.
//! * [`coupled_particle_filter`]: fine/coarse particle pairs propagated with
//!   shared randomness and resampled with shared ancestors under the
//!   arithmetic-mean potential `Ǧ = (G(y^l) + G(y^{l-1})) / 2`.
//! * [`unbiased_level_difference`]: reweights the coupled output into `2N`
//!   signed samples whose weighted sum estimates `γ^{(θ,l)}(φ) - γ^{(θ,l-1)}(φ)`.
//!
//! All weights are carried as logarithms. Negative weights keep their sign
//! separately. Resampling is multinomial and happens after every weighting step
//! except the last: the terminal weights `w_n^i` stay attached to the particles
//! they were computed from.
//!
//! Potentials only need to be positive and finite where evaluated. The uniform
//! bounds `c^{-1} ≤ G ≤ c` used in the convergence theory are not enforced; a
//! Gaussian likelihood violates the lower bound in its tails.

use std::f64::consts::LN_2;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::diagnostics::{log_add_exp, log_sum_exp};
use crate::error::{Error, Result};
use crate::sde_euler::{
    propagate_unit_coupled_in_place, propagate_unit_in_place, PropagationScratch, SdeModel,
};

/// `ln G_k^θ(y)` for the datum `z = z_k`. `k` is 1-based.
pub trait ObservationModel: Send + Sync + fmt::Debug {
    fn log_potential(&self, k: usize, theta: &[f64], y: &[f64], z: &[f64]) -> f64;
}

/// Which function of the latent state is observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservationMap {
    /// `h(y) = y₀`.
    #[default]
    Identity,
    /// `h(y) = ln y₀`; non-positive states have zero likelihood.
    Log,
}

impl ObservationMap {
    pub fn apply(self, y: f64) -> f64 {
        match self {
            Self::Identity => y,
            Self::Log => {
                if y > 0.0 {
                    y.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// `z_k | Y_k = y ~ N(h(y), σ²)` in the first state coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianObservation {
    variance: f64,
    map: ObservationMap,
}

impl GaussianObservation {
    pub fn new(variance: f64, map: ObservationMap) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid("variance", "must be positive and finite"));
        }
        Ok(Self { variance, map })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn map(&self) -> ObservationMap {
        self.map
    }
}

impl ObservationModel for GaussianObservation {
    fn log_potential(&self, _k: usize, _theta: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let mean = self.map.apply(y[0]);
        if !mean.is_finite() {
            return f64::NEG_INFINITY;
        }
        let r = z[0] - mean;
        -0.5 * (r * r / self.variance + (2.0 * std::f64::consts::PI * self.variance).ln())
    }
}

/// `G ≡ κ`, stored as `ln κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPotential {
    pub log_value: f64,
}

impl ObservationModel for ConstantPotential {
    fn log_potential(&self, _k: usize, _theta: &[f64], _y: &[f64], _z: &[f64]) -> f64 {
        self.log_value
    }
}

/// Latent SDE, observation potential, data `z_{1:n}` and initial state `y₀`.
#[derive(Debug, Clone)]
pub struct HmmSpec {
    model: Arc<SdeModel>,
    observation: Arc<dyn ObservationModel>,
    data: Vec<Vec<f64>>,
    y0: Vec<f64>,
}

impl HmmSpec {
    pub fn new(
        model: Arc<SdeModel>,
        observation: Arc<dyn ObservationModel>,
        data: Vec<Vec<f64>>,
        y0: Vec<f64>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("data", "need at least one observation"));
        }
        if y0.len() != model.state_dim() {
            return Err(Error::Misaligned {
                expected: model.state_dim(),
                found: y0.len(),
            });
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("y0", "must be finite"));
        }
        Ok(Self {
            model,
            observation,
            data,
            y0,
        })
    }

    pub fn model(&self) -> &Arc<SdeModel> {
        &self.model
    }

    pub fn observation(&self) -> &Arc<dyn ObservationModel> {
        &self.observation
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    /// Horizon `n`.
    pub fn horizon(&self) -> usize {
        self.data.len()
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn state_dim(&self) -> usize {
        self.y0.len()
    }

    fn log_g(&self, k: usize, theta: &[f64], y: &[f64]) -> f64 {
        self.observation
            .log_potential(k, theta, y, &self.data[k - 1])
    }
}

/// How much of each particle's history to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    /// The whole unit-time path `(Y_1, …, Y_n)`.
    #[default]
    Full,
    /// Only `Y_n`.
    Terminal,
}

/// `N` ancestor indices drawn i.i.d. from `weights`.
pub fn multinomial_resample(
    weights: &[f64],
    count: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::invalid("weights", "must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateWeights { step: 0 });
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("weights", "must sum to 1"));
    }
    Ok(draw(&Cumulative::new(weights.iter().copied()), count, rng))
}

/// Running sums of a weight vector plus the last index with positive weight.
struct Cumulative {
    sums: Vec<f64>,
    last_positive: usize,
}

impl Cumulative {
    fn new(weights: impl Iterator<Item = f64>) -> Self {
        let mut sums = Vec::with_capacity(weights.size_hint().0);
        let mut last_positive = 0;
        let mut acc = 0.0;
        for (i, w) in weights.enumerate() {
            if w > 0.0 {
                last_positive = i;
            }
            acc += w;
            sums.push(acc);
        }
        Self {
            sums,
            last_positive,
        }
    }
}

fn draw(cumulative: &Cumulative, count: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let total = *cumulative.sums.last().expect("nonempty weights");
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            // Zero-weight entries repeat their predecessor's running sum and
            // are never the first index whose sum exceeds u.
            let idx = cumulative.sums.partition_point(|&c| c <= u);
            idx.min(cumulative.last_positive)
        })
        .collect()
}

/// Resample from log-weights; `step` tags the degeneracy error.
fn resample_log(log_w: &[f64], step: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return Err(Error::DegenerateWeights { step });
    }
    let weights = log_w.iter().map(|lw| (lw - lse).exp());
    Ok(draw(&Cumulative::new(weights), log_w.len(), rng))
}

/// Particle states over time plus resampling ancestry, traced back into
/// per-particle paths when the filter finishes.
#[derive(Debug, Clone)]
struct History {
    d: usize,
    storage: Storage,
    states: Vec<Vec<f64>>,
    ancestors: Vec<Vec<usize>>,
}

impl History {
    fn new(d: usize, storage: Storage) -> Self {
        Self {
            d,
            storage,
            states: Vec::new(),
            ancestors: Vec::new(),
        }
    }

    fn record(&mut self, current: &[f64]) {
        if self.storage == Storage::Full {
            self.states.push(current.to_vec());
        }
    }

    fn record_ancestors(&mut self, ancestors: &[usize]) {
        if self.storage == Storage::Full {
            self.ancestors.push(ancestors.to_vec());
        }
    }

    /// `N × len × d` trajectories, `len = n` or `1`.
    fn into_paths(self, terminal: &[f64]) -> Vec<f64> {
        let d = self.d;
        let n_particles = terminal.len() / d;
        match self.storage {
            Storage::Terminal => terminal.to_vec(),
            Storage::Full => {
                let n = self.states.len();
                let mut out = vec![0.0; n_particles * n * d];
                for i in 0..n_particles {
                    let path = &mut out[i * n * d..(i + 1) * n * d];
                    let mut idx = i;
                    for k in (0..n).rev() {
                        if k + 1 < n {
                            idx = self.ancestors[k][idx];
                        }
                        path[k * d..(k + 1) * d]
                            .copy_from_slice(&self.states[k][idx * d..(idx + 1) * d]);
                    }
                }
                out
            }
        }
    }
}

fn gather(current: &[f64], ancestors: &[usize], d: usize, out: &mut Vec<f64>) {
    out.clear();
    for &a in ancestors {
        out.extend_from_slice(&current[a * d..(a + 1) * d]);
    }
}

fn gather_scalar(values: &mut Vec<f64>, ancestors: &[usize]) {
    let picked: Vec<f64> = ancestors.iter().map(|&a| values[a]).collect();
    *values = picked;
}

fn check_filter_args(theta: &[f64], n_particles: usize) -> Result<()> {
    if n_particles == 0 {
        return Err(Error::invalid("particles", "need at least one particle"));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("theta", "must be finite"));
    }
    Ok(())
}

fn checked_log_weights(
    hmm: &HmmSpec,
    k: usize,
    theta: &[f64],
    states: &[f64],
    out: &mut Vec<f64>,
) -> Result<()> {
    out.clear();
    let d = hmm.state_dim();
    for y in states.chunks_exact(d) {
        let lg = hmm.log_g(k, theta, y);
        if lg.is_nan() || lg == f64::INFINITY {
            return Err(Error::DegenerateWeights { step: k });
        }
        out.push(lg);
    }
    Ok(())
}

/// Output of [`particle_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    n_particles: usize,
    state_dim: usize,
    path_len: usize,
    paths: Vec<f64>,
    log_weights: Vec<f64>,
    log_evidence: f64,
    steps: u64,
}

impl ParticleCloud {
    pub fn len(&self) -> usize {
        self.n_particles
    }

    pub fn is_empty(&self) -> bool {
        self.n_particles == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Stored states per path: `n` under [`Storage::Full`], `1` otherwise.
    pub fn path_len(&self) -> usize {
        self.path_len
    }

    /// Flattened path of particle `i`.
    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.path_len * self.state_dim;
        &self.paths[i * w..(i + 1) * w]
    }

    pub fn terminal(&self, i: usize) -> &[f64] {
        let p = self.path(i);
        &p[p.len() - self.state_dim..]
    }

    /// `ln V^i`.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `ln Σ_i V^i`, the log of the unbiased evidence estimate.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn evidence(&self) -> f64 {
        self.log_evidence.exp()
    }

    /// Normalized weights `W_n^i`.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .map(|lw| (lw - self.log_evidence).exp())
            .collect()
    }

    /// `Σ_i W_n^i φ(path_i)`.
    pub fn self_normalized(&self, phi: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.normalized_weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * phi(self.path(i)))
            .sum()
    }

    /// Euler steps spent.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Bootstrap particle filter at `level`.
pub fn particle_filter(
    hmm: &HmmSpec,
    theta: &[f64],
    level: u32,
    n_particles: usize,
    storage: Storage,
    rng: &mut dyn RngCore,
) -> Result<ParticleCloud> {
    check_filter_args(theta, n_particles)?;
    let model = hmm.model();
    let params = model.levels().get(level)?;
    let d = hmm.state_dim();
    let n = hmm.horizon();
    let ln_n = (n_particles as f64).ln();

    let mut current: Vec<f64> = hmm.y0().repeat(n_particles);
    let mut next = Vec::with_capacity(current.len());
    let mut log_w = Vec::with_capacity(n_particles);
    let mut history = History::new(d, storage);
    let mut scratch = PropagationScratch::default();
    let mut log_norm = 0.0;
    let mut steps = 0;

    for k in 1..=n {
        for y in current.chunks_exact_mut(d) {
            steps += propagate_unit_in_place(y, theta, params, model, rng, &mut scratch)?;
        }
        history.record(&current);
        checked_log_weights(hmm, k, theta, &current, &mut log_w)?;
        if k < n {
            let lse = log_sum_exp(&log_w);
            if !lse.is_finite() {
                return Err(Error::DegenerateWeights { step: k });
            }
            log_norm += lse - ln_n;
            let ancestors = resample_log(&log_w, k, rng)?;
            history.record_ancestors(&ancestors);
            gather(&current, &ancestors, d, &mut next);
            std::mem::swap(&mut current, &mut next);
        }
    }

    let log_weights: Vec<f64> = log_w.iter().map(|lw| log_norm + lw - ln_n).collect();
    let log_evidence = log_sum_exp(&log_weights);
    if !log_evidence.is_finite() {
        return Err(Error::DegenerateWeights { step: n });
    }
    let path_len = if storage == Storage::Full { n } else { 1 };
    Ok(ParticleCloud {
        n_particles,
        state_dim: d,
        path_len,
        paths: history.into_paths(&current),
        log_weights,
        log_evidence,
        steps,
    })
}

/// `Ǧ = (G_fine + G_coarse) / 2`.
pub fn coupled_potential(g_fine: f64, g_coarse: f64) -> f64 {
    0.5 * (g_fine + g_coarse)
}

/// `ln Ǧ` from `ln G` at the fine and coarse states.
pub fn coupled_log_potential(log_g_fine: f64, log_g_coarse: f64) -> f64 {
    if log_g_fine == log_g_coarse {
        return log_g_fine;
    }
    log_add_exp(log_g_fine, log_g_coarse) - LN_2
}

/// `ln(G/Ǧ)`; zero when `Ǧ = 0` so that the factor never turns into NaN (the
/// particle carries zero weight in that case).
fn log_ratio(log_g: f64, log_check: f64) -> f64 {
    if log_check == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        let r = log_g - log_check;
        debug_assert!(r <= LN_2 + 1e-12, "H factor exceeds 2: {}", r.exp());
        r
    }
}

/// Output of [`coupled_particle_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledCloud {
    n_particles: usize,
    state_dim: usize,
    path_len: usize,
    fine_paths: Vec<f64>,
    coarse_paths: Vec<f64>,
    /// `ln V̌^i`.
    log_weights: Vec<f64>,
    /// `ln H^{(θ,l)}` along each resampled ancestry.
    log_h_fine: Vec<f64>,
    /// `ln H^{(θ,l-1)}` along each resampled ancestry.
    log_h_coarse: Vec<f64>,
    log_evidence: f64,
    fine_steps: u64,
    coarse_steps: u64,
}

impl CoupledCloud {
    pub fn len(&self) -> usize {
        self.n_particles
    }

    pub fn is_empty(&self) -> bool {
        self.n_particles == 0
    }

    pub fn path_len(&self) -> usize {
        self.path_len
    }

    pub fn fine_path(&self, i: usize) -> &[f64] {
        let w = self.path_len * self.state_dim;
        &self.fine_paths[i * w..(i + 1) * w]
    }

    pub fn coarse_path(&self, i: usize) -> &[f64] {
        let w = self.path_len * self.state_dim;
        &self.coarse_paths[i * w..(i + 1) * w]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_h_fine(&self) -> &[f64] {
        &self.log_h_fine
    }

    pub fn log_h_coarse(&self) -> &[f64] {
        &self.log_h_coarse
    }

    /// `ln Σ V̌^i`.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn fine_steps(&self) -> u64 {
        self.fine_steps
    }

    pub fn coarse_steps(&self) -> u64 {
        self.coarse_steps
    }
}

/// Coupled particle filter on fine level `level` and coarse level `level - 1`.
pub fn coupled_particle_filter(
    hmm: &HmmSpec,
    theta: &[f64],
    level: u32,
    n_particles: usize,
    storage: Storage,
    rng: &mut dyn RngCore,
) -> Result<CoupledCloud> {
    check_filter_args(theta, n_particles)?;
    if level == 0 {
        return Err(Error::LevelMismatch { fine: 0, coarse: 0 });
    }
    let model = hmm.model();
    let (fine, coarse) = model.levels().pair(level)?;
    let d = hmm.state_dim();
    let n = hmm.horizon();
    let ln_n = (n_particles as f64).ln();

    let mut yf: Vec<f64> = hmm.y0().repeat(n_particles);
    let mut yc = yf.clone();
    let mut buf = Vec::with_capacity(yf.len());
    let mut hist_f = History::new(d, storage);
    let mut hist_c = History::new(d, storage);
    let mut scratch = PropagationScratch::default();
    let mut lgf = Vec::with_capacity(n_particles);
    let mut lgc = Vec::with_capacity(n_particles);
    let mut log_check = vec![0.0; n_particles];
    let mut log_h_fine = vec![0.0; n_particles];
    let mut log_h_coarse = vec![0.0; n_particles];
    let mut log_norm = 0.0;
    let (mut fine_steps, mut coarse_steps) = (0, 0);

    for k in 1..=n {
        for (a, b) in yf.chunks_exact_mut(d).zip(yc.chunks_exact_mut(d)) {
            let (sf, sc) = propagate_unit_coupled_in_place(
                a,
                b,
                theta,
                fine,
                coarse,
                model,
                rng,
                &mut scratch,
            )?;
            fine_steps += sf;
            coarse_steps += sc;
        }
        hist_f.record(&yf);
        hist_c.record(&yc);
        checked_log_weights(hmm, k, theta, &yf, &mut lgf)?;
        checked_log_weights(hmm, k, theta, &yc, &mut lgc)?;
        for i in 0..n_particles {
            let lc = coupled_log_potential(lgf[i], lgc[i]);
            log_check[i] = lc;
            log_h_fine[i] += log_ratio(lgf[i], lc);
            log_h_coarse[i] += log_ratio(lgc[i], lc);
        }
        if k < n {
            let lse = log_sum_exp(&log_check);
            if !lse.is_finite() {
                return Err(Error::DegenerateWeights { step: k });
            }
            log_norm += lse - ln_n;
            let ancestors = resample_log(&log_check, k, rng)?;
            hist_f.record_ancestors(&ancestors);
            hist_c.record_ancestors(&ancestors);
            gather(&yf, &ancestors, d, &mut buf);
            std::mem::swap(&mut yf, &mut buf);
            gather(&yc, &ancestors, d, &mut buf);
            std::mem::swap(&mut yc, &mut buf);
            gather_scalar(&mut log_h_fine, &ancestors);
            gather_scalar(&mut log_h_coarse, &ancestors);
        }
    }

    let log_weights: Vec<f64> = log_check.iter().map(|lw| log_norm + lw - ln_n).collect();
    let log_evidence = log_sum_exp(&log_weights);
    if !log_evidence.is_finite() {
        return Err(Error::DegenerateWeights { step: n });
    }
    let path_len = if storage == Storage::Full { n } else { 1 };
    Ok(CoupledCloud {
        n_particles,
        state_dim: d,
        path_len,
        fine_paths: hist_f.into_paths(&yf),
        coarse_paths: hist_c.into_paths(&yc),
        log_weights,
        log_h_fine,
        log_h_coarse,
        log_evidence,
        fine_steps,
        coarse_steps,
    })
}

/// One of the `2N` signed samples of [`LevelDifference`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedWeightedSample<'a> {
    pub path: &'a [f64],
    /// `ln |V|`; `-inf` for a zero weight.
    pub log_abs_weight: f64,
    pub negative: bool,
}

impl SignedWeightedSample<'_> {
    pub fn weight(&self) -> f64 {
        let w = self.log_abs_weight.exp();
        if self.negative {
            -w
        } else {
            w
        }
    }
}

/// Signed-weight estimator of `γ^{(θ,l)} - γ^{(θ,l-1)}`: fine paths with
/// weight `+V̌^i H^{(θ,l)}` followed by coarse paths with weight
/// `-V̌^i H^{(θ,l-1)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelDifference {
    level: u32,
    cloud: CoupledCloud,
    log_fine: Vec<f64>,
    log_coarse: Vec<f64>,
}

impl LevelDifference {
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Pairs in the underlying coupled filter (`N_l`); there are twice as many
    /// samples.
    pub fn pairs(&self) -> usize {
        self.cloud.n_particles
    }

    pub fn cloud(&self) -> &CoupledCloud {
        &self.cloud
    }

    /// `ln V^i` of the fine half.
    pub fn log_fine_weights(&self) -> &[f64] {
        &self.log_fine
    }

    /// `ln |V^i|` of the coarse half.
    pub fn log_coarse_weights(&self) -> &[f64] {
        &self.log_coarse
    }

    pub fn samples(&self) -> impl Iterator<Item = SignedWeightedSample<'_>> + '_ {
        let fine = (0..self.pairs()).map(move |i| SignedWeightedSample {
            path: self.cloud.fine_path(i),
            log_abs_weight: self.log_fine[i],
            negative: false,
        });
        let coarse = (0..self.pairs()).map(move |i| SignedWeightedSample {
            path: self.cloud.coarse_path(i),
            log_abs_weight: self.log_coarse[i],
            negative: true,
        });
        fine.chain(coarse)
    }

    /// `Σ_i V^i φ(Y^i) · e^{-log_scale}`. Each half is summed on its own and
    /// the coarse sum subtracted last, so identical halves cancel exactly.
    pub fn scaled_sum(&self, phi: &dyn Fn(&[f64]) -> f64, log_scale: f64) -> f64 {
        let half = |log_w: &[f64], paths: &[f64]| -> f64 {
            let w = self.cloud.path_len * self.cloud.state_dim;
            log_w
                .iter()
                .zip(paths.chunks_exact(w))
                .filter(|(lw, _)| **lw > f64::NEG_INFINITY)
                .map(|(lw, p)| (lw - log_scale).exp() * phi(p))
                .sum()
        };
        let f = half(&self.log_fine, &self.cloud.fine_paths);
        let c = half(&self.log_coarse, &self.cloud.coarse_paths);
        f - c
    }

    /// `Σ_i V^i φ(Y^i)`.
    pub fn weighted_sum(&self, phi: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.scaled_sum(phi, 0.0)
    }

    pub fn steps(&self) -> u64 {
        self.cloud.fine_steps + self.cloud.coarse_steps
    }
}

/// Run the coupled filter at `level` and attach the H-ratio signed weights.
pub fn unbiased_level_difference(
    hmm: &HmmSpec,
    theta: &[f64],
    level: u32,
    n_particles: usize,
    storage: Storage,
    rng: &mut dyn RngCore,
) -> Result<LevelDifference> {
    let cloud = coupled_particle_filter(hmm, theta, level, n_particles, storage, rng)?;
    let combine = |h: &[f64]| -> Vec<f64> {
        cloud
            .log_weights
            .iter()
            .zip(h)
            .map(|(v, h)| {
                if *v == f64::NEG_INFINITY || *h == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    v + h
                }
            })
            .collect()
    };
    let log_fine = combine(&cloud.log_h_fine);
    let log_coarse = combine(&cloud.log_h_coarse);
    Ok(LevelDifference {
        level,
        cloud,
        log_fine,
        log_coarse,
    })
}
