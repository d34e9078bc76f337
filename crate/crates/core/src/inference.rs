//! Unbiased posterior expectations by PMMH plus a randomized multilevel
//! importance-sampling correction.
//!
//! Part 1 runs particle marginal Metropolis–Hastings at the coarse level
//! `l_min`, targeting the posterior `Π^{(l_min)}(dθ, dy_{1:n})`. The chain is
//! summarized by its distinct accepted states `θ̂_k`, each with the particle
//! cloud that was accepted with it and a repeat count `D_k`.
//!
//! Part 2 visits each distinct state once, draws a level `l_k ~ P_l`, and runs
//! the signed-weight level-difference estimator at `(θ̂_k, l_k)`. Dividing by
//! `p_{l_k}` removes the discretization bias in expectation. The two parts
//! combine into the ratio estimator
//!
//! ```text
//! Π_ub(φ) = Σ_k {Σ_i W_{k,l_min}^i φ(θ̂_k, Ŷ^i) + Σ_i W_{k,l_k}^i φ(θ̂_k, Y^i)}
//!         / Σ_k {Σ_i W_{k,l_min}^i + Σ_i W_{k,l_k}^i}
//! ```
//!
//! with `W_{k,l_min}^i = D_k V̂_k^i / (Σ_j V̂_k^j + ε)` and
//! `W_{k,l_k}^i = D_k V̄_k^i / (p_{l_k} (Σ_j V̂_k^j + ε))`.
//!
//! The correction carries the repeat count `D_k` just as the coarse term does,
//! which makes the grouped form above equal to the per-iteration sum over all
//! recorded chain iterations. [`CorrectionOptions::scale_by_repeats`] set to
//! `false` drops the factor from the correction for comparison; that variant
//! under-weights the correction for states the chain lingers in.

use std::fmt;
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::diagnostics::log_add_exp;
use crate::error::{Error, Result};
use crate::rng::{SimRng, StreamKey};
use crate::smc::{
    particle_filter, unbiased_level_difference, HmmSpec, LevelDifference, ParticleCloud, Storage,
};

/// Prior and proposal over `θ ∈ ℝ^{d_θ}`.
pub trait ParamModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `ln Π̄(θ)`, `-inf` outside the support.
    fn log_prior(&self, theta: &[f64]) -> f64;
    /// Draw `θ' ~ q(θ, ·)`.
    fn propose(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64>;
    /// `ln q(θ, θ')`, up to a constant shared by all pairs.
    fn log_proposal(&self, from: &[f64], to: &[f64]) -> f64;
    /// A starting point for the chain.
    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64>;

    fn admissible(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim() && self.log_prior(theta) > f64::NEG_INFINITY
    }
}

/// Uniform prior on a box with a Gaussian random-walk proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRandomWalk {
    lower: Vec<f64>,
    upper: Vec<f64>,
    step: Vec<f64>,
}

impl BoxRandomWalk {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, step: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != step.len() {
            return Err(Error::invalid(
                "box",
                "bounds and steps must share a nonzero length",
            ));
        }
        for ((lo, hi), s) in lower.iter().zip(&upper).zip(&step) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid("box", "need finite lower < upper"));
            }
            if !(s.is_finite() && *s > 0.0) {
                return Err(Error::invalid("step", "must be positive and finite"));
            }
        }
        Ok(Self { lower, upper, step })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn step(&self) -> &[f64] {
        &self.step
    }
}

impl ParamModel for BoxRandomWalk {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let inside = theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| t >= lo && t <= hi);
        if inside {
            -self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| (hi - lo).ln())
                .sum::<f64>()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn propose(&self, theta: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.step)
            .map(|(t, s)| {
                let z: f64 = StandardNormal.sample(rng);
                t + s * z
            })
            .collect()
    }

    fn log_proposal(&self, from: &[f64], to: &[f64]) -> f64 {
        from.iter()
            .zip(to)
            .zip(&self.step)
            .map(|((a, b), s)| {
                let r = (b - a) / s;
                -0.5 * r * r - s.ln()
            })
            .sum()
    }

    fn initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

/// Something that returns an evidence estimate `Σ V^i` at `θ`, together with
/// whatever should be stored alongside an accepted state.
pub trait EvidenceEstimator: Sync {
    type Output: Clone + Send + Sync;

    fn run(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Self::Output>;
    /// `ln Σ V^i`; `-inf` for a zero estimate.
    fn log_evidence(output: &Self::Output) -> f64;
    /// Euler steps spent producing `output`.
    fn steps(_output: &Self::Output) -> u64 {
        0
    }
}

/// Particle-filter evidence at a fixed level.
#[derive(Debug, Clone, Copy)]
pub struct PfEvidence<'a> {
    pub hmm: &'a HmmSpec,
    pub level: u32,
    pub particles: usize,
    pub storage: Storage,
}

impl EvidenceEstimator for PfEvidence<'_> {
    type Output = ParticleCloud;

    fn run(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<ParticleCloud> {
        particle_filter(
            self.hmm,
            theta,
            self.level,
            self.particles,
            self.storage,
            rng,
        )
    }

    fn log_evidence(output: &ParticleCloud) -> f64 {
        output.log_evidence()
    }

    fn steps(output: &ParticleCloud) -> u64 {
        output.steps()
    }
}

/// Settings for [`pmmh_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct PmmhConfig {
    /// Total MH iterations `S`, burn-in included.
    pub iterations: usize,
    /// Leading iterations left out of the record; `None` means 10% of `S`.
    pub burn_in: Option<usize>,
    pub epsilon: f64,
    /// Attempts at finding a starting state with positive evidence.
    pub init_attempts: usize,
    /// Start here instead of drawing from [`ParamModel::initial`].
    pub initial_theta: Option<Vec<f64>>,
}

impl Default for PmmhConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: None,
            epsilon: 1e-8,
            init_attempts: 100,
            initial_theta: None,
        }
    }
}

impl PmmhConfig {
    pub fn burn_in_iterations(&self) -> usize {
        self.burn_in
            .unwrap_or(self.iterations / 10)
            .min(self.iterations)
    }
}

/// A distinct state visited by the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<O> {
    pub theta: Vec<f64>,
    pub output: O,
    pub log_evidence: f64,
}

/// Distinct post-burn-in states, their repeat counts, and the visit sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PmmhChainRecord<O> {
    pub states: Vec<ChainState<O>>,
    /// `D_k ≥ 1`; sums to `S - burn_in`.
    pub repeats: Vec<u64>,
    /// State index occupied after each recorded iteration.
    pub visits: Vec<usize>,
    /// Accepted proposals over all `S` iterations.
    pub accepted: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub epsilon: f64,
    /// Euler steps over all PF runs, initialization included.
    pub steps: u64,
}

impl<O> PmmhChainRecord<O> {
    /// Distinct states `K̂`.
    pub fn distinct(&self) -> usize {
        self.states.len()
    }

    pub fn accept_rate(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iterations as f64
        }
    }

    /// `f(θ)` along the recorded iterations, for autocorrelation or
    /// batch-means diagnostics.
    pub fn trace(&self, f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
        let values: Vec<f64> = self.states.iter().map(|s| f(&s.theta)).collect();
        self.visits.iter().map(|&k| values[k]).collect()
    }

    /// Chain average of `f(θ)`.
    pub fn posterior_mean(&self, f: &dyn Fn(&[f64]) -> f64) -> f64 {
        let total: u64 = self.repeats.iter().sum();
        let s: f64 = self
            .states
            .iter()
            .zip(&self.repeats)
            .map(|(st, &d)| d as f64 * f(&st.theta))
            .sum();
        s / total as f64
    }
}

impl PmmhChainRecord<ParticleCloud> {
    /// Chain average of the self-normalized particle estimate of `φ(θ, path)`.
    pub fn posterior_expectation(&self, phi: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
        let total: u64 = self.repeats.iter().sum();
        let s: f64 = self
            .states
            .iter()
            .zip(&self.repeats)
            .map(|(st, &d)| d as f64 * st.output.self_normalized(&|p| phi(&st.theta, p)))
            .sum();
        s / total as f64
    }
}

/// `ln(x + ε)` from `ln x`.
fn log_plus_epsilon(log_x: f64, epsilon: f64) -> f64 {
    log_add_exp(log_x, epsilon.ln())
}

fn run_estimator<E: EvidenceEstimator>(
    estimator: &E,
    theta: &[f64],
    rng: &mut dyn RngCore,
) -> Result<Option<E::Output>> {
    match estimator.run(theta, rng) {
        Ok(out) => Ok(Some(out)),
        Err(Error::DegenerateWeights { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Particle marginal Metropolis–Hastings with the `ε`-regularized acceptance
/// ratio. A particle filter that degenerates counts as a zero evidence
/// estimate.
pub fn pmmh_run<E: EvidenceEstimator>(
    estimator: &E,
    param: &dyn ParamModel,
    config: &PmmhConfig,
    rng: &mut dyn RngCore,
) -> Result<PmmhChainRecord<E::Output>> {
    if config.iterations == 0 {
        return Err(Error::invalid("iterations", "need at least one iteration"));
    }
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", "must be positive and finite"));
    }
    let mut steps = 0u64;

    let mut last = String::from("no attempts");
    let mut current = None;
    for _ in 0..config.init_attempts.max(1) {
        let theta = match &config.initial_theta {
            Some(t) => t.clone(),
            None => param.initial(rng),
        };
        if !param.admissible(&theta) {
            last = format!("initial θ {theta:?} outside prior support");
            continue;
        }
        match run_estimator(estimator, &theta, rng)? {
            Some(out) => {
                steps += E::steps(&out);
                let le = E::log_evidence(&out);
                if le > f64::NEG_INFINITY {
                    current = Some(ChainState {
                        theta,
                        output: out,
                        log_evidence: le,
                    });
                    break;
                }
                last = "zero evidence estimate".into();
            }
            None => last = "degenerate particle weights".into(),
        }
    }
    let mut current = current.ok_or(Error::InitializationFailed {
        attempts: config.init_attempts.max(1),
        last,
    })?;

    let burn_in = config.burn_in_iterations();
    let mut states = Vec::new();
    let mut repeats: Vec<u64> = Vec::new();
    let mut visits = Vec::with_capacity(config.iterations - burn_in);
    let mut accepted = 0;

    for k in 1..=config.iterations {
        let proposal = param.propose(&current.theta, rng);
        let lp_new = param.log_prior(&proposal);
        let mut moved = false;
        if lp_new > f64::NEG_INFINITY {
            let out = run_estimator(estimator, &proposal, rng)?;
            let (le_new, out) = match out {
                Some(o) => {
                    steps += E::steps(&o);
                    (E::log_evidence(&o), Some(o))
                }
                None => (f64::NEG_INFINITY, None),
            };
            let log_ratio = param.log_proposal(&proposal, &current.theta)
                - param.log_proposal(&current.theta, &proposal)
                + lp_new
                - param.log_prior(&current.theta)
                + log_plus_epsilon(le_new, config.epsilon)
                - log_plus_epsilon(current.log_evidence, config.epsilon);
            if log_ratio.is_nan() {
                return Err(Error::NonFiniteRatio { iteration: k });
            }
            let u: f64 = rng.random();
            if let Some(out) = out.filter(|_| u.ln() < log_ratio) {
                current = ChainState {
                    theta: proposal,
                    output: out,
                    log_evidence: le_new,
                };
                accepted += 1;
                moved = true;
            }
        }
        if k > burn_in {
            if moved || states.is_empty() {
                states.push(current.clone());
                repeats.push(1);
            } else {
                *repeats.last_mut().expect("nonempty") += 1;
            }
            visits.push(states.len() - 1);
        }
    }

    Ok(PmmhChainRecord {
        states,
        repeats,
        visits,
        accepted,
        iterations: config.iterations,
        burn_in,
        epsilon: config.epsilon,
        steps,
    })
}

/// `p_l ∝ 2^{-a l}` on `{l_min+1, …, l_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPmf {
    first: u32,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl LevelPmf {
    pub fn geometric(l_min: u32, l_max: u32, exponent: f64) -> Result<Self> {
        if l_max <= l_min {
            return Err(Error::invalid("l_max", "must exceed l_min"));
        }
        if !exponent.is_finite() {
            return Err(Error::invalid("exponent", "must be finite"));
        }
        let raw: Vec<f64> = (l_min + 1..=l_max)
            .map(|l| (-exponent * l as f64).exp2())
            .collect();
        Self::from_weights(l_min + 1, &raw)
    }

    /// Probabilities proportional to `weights` on `first, first+1, …`.
    pub fn from_weights(first: u32, weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("pmf", "weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            first,
            probs,
            cumulative,
        })
    }

    pub fn support(&self) -> std::ops::RangeInclusive<u32> {
        self.first..=self.first + self.probs.len() as u32 - 1
    }

    pub fn prob(&self, level: u32) -> f64 {
        level
            .checked_sub(self.first)
            .and_then(|i| self.probs.get(i as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> u32 {
        let total = *self.cumulative.last().expect("nonempty pmf");
        let u = rng.random::<f64>() * total;
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.probs.len() - 1);
        self.first + idx as u32
    }
}

/// Draw a level from `pmf`.
pub fn sample_level(pmf: &LevelPmf, rng: &mut dyn RngCore) -> u32 {
    pmf.sample(rng)
}

/// Settings for [`is_correction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionOptions {
    /// `Ñ`, coupled particle pairs per correction.
    pub particles: usize,
    pub storage: Storage,
    /// Multiply the correction of state `k` by `D_k`.
    pub scale_by_repeats: bool,
}

impl Default for CorrectionOptions {
    fn default() -> Self {
        Self {
            particles: 20,
            storage: Storage::Full,
            scale_by_repeats: true,
        }
    }
}

/// Level-difference output for one distinct chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTerm {
    pub state: usize,
    pub level: u32,
    pub prob: f64,
    pub difference: LevelDifference,
}

/// All Part-2 corrections, indexed by chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTerms {
    pub terms: Vec<CorrectionTerm>,
    pub scale_by_repeats: bool,
    pub steps: u64,
}

/// Part 2: one randomized level-difference run per distinct chain state.
///
/// Task `k` draws from `key.child(k)`, first its level and then the coupled
/// filter, so results do not depend on the worker count or on scheduling.
/// Tasks run on the current rayon pool, deepest levels first.
pub fn is_correction(
    record: &PmmhChainRecord<ParticleCloud>,
    hmm: &HmmSpec,
    pmf: &LevelPmf,
    options: &CorrectionOptions,
    key: &StreamKey,
) -> Result<CorrectionTerms> {
    if record.states.is_empty() {
        return Err(Error::invalid("record", "no recorded chain states"));
    }
    let mut tasks: Vec<(usize, u32, SimRng)> = (0..record.states.len())
        .map(|k| {
            let mut rng = key.child(k as u64).rng();
            let level = pmf.sample(&mut rng);
            (k, level, rng)
        })
        .collect();
    tasks.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut results: Vec<(usize, Result<CorrectionTerm>)> = tasks
        .into_par_iter()
        .map(|(k, level, mut rng)| {
            let out = unbiased_level_difference(
                hmm,
                &record.states[k].theta,
                level,
                options.particles,
                options.storage,
                &mut rng,
            )
            .map(|difference| CorrectionTerm {
                state: k,
                level,
                prob: pmf.prob(level),
                difference,
            })
            .map_err(|e| Error::CorrectionTask {
                state: k,
                level,
                source: Box::new(e),
            });
            (k, out)
        })
        .collect();
    results.sort_by_key(|(k, _)| *k);

    let mut terms = Vec::with_capacity(results.len());
    for (_, r) in results {
        terms.push(r?);
    }
    let steps = terms.iter().map(|t| t.difference.steps()).sum();
    Ok(CorrectionTerms {
        terms,
        scale_by_repeats: options.scale_by_repeats,
        steps,
    })
}

/// Per-state contributions before the `D_k` factor: `(φ-sum, 1-sum)` of the
/// coarse cloud and of the correction, each already divided by
/// `Σ V̂ + ε` (and by `p_{l_k}` for the correction).
#[derive(Debug, Clone, Copy, PartialEq)]
struct StateContribution {
    coarse: (f64, f64),
    correction: (f64, f64),
}

fn state_contributions(
    record: &PmmhChainRecord<ParticleCloud>,
    corrections: Option<&CorrectionTerms>,
    phi: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Vec<StateContribution> {
    record
        .states
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let log_den = log_plus_epsilon(st.log_evidence, record.epsilon);
            let cloud = &st.output;
            let (mut cn, mut cd) = (0.0, 0.0);
            for (i, lw) in cloud.log_weights().iter().enumerate() {
                let w = (lw - log_den).exp();
                cn += w * phi(&st.theta, cloud.path(i));
                cd += w;
            }
            let correction = corrections.map_or((0.0, 0.0), |c| {
                let term = &c.terms[k];
                let scale = log_den + term.prob.ln();
                (
                    term.difference.scaled_sum(&|p| phi(&st.theta, p), scale),
                    term.difference.scaled_sum(&|_| 1.0, scale),
                )
            });
            StateContribution {
                coarse: (cn, cd),
                correction,
            }
        })
        .collect()
}

/// Assembled estimator with its cost tallies.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedEstimate {
    pub value: f64,
    pub numerator: f64,
    pub denominator: f64,
    /// The same ratio summed iteration by iteration over the recorded chain.
    /// Present when the correction is scaled by `D_k`.
    pub per_iteration_value: Option<f64>,
    /// Sampled `l_k` per distinct state.
    pub levels: Vec<u32>,
    pub pmmh_steps: u64,
    pub correction_steps: u64,
    pub wall_seconds: f64,
}

impl UnbiasedEstimate {
    pub fn euler_steps(&self) -> u64 {
        self.pmmh_steps + self.correction_steps
    }
}

/// Combine Part 1 and Part 2 into `Π_ub(φ)`.
pub fn assemble_estimate(
    record: &PmmhChainRecord<ParticleCloud>,
    corrections: Option<&CorrectionTerms>,
    phi: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Result<UnbiasedEstimate> {
    if record.states.is_empty() {
        return Err(Error::invalid("record", "no recorded chain states"));
    }
    if let Some(c) = corrections {
        if c.terms.len() != record.states.len() {
            return Err(Error::Misaligned {
                expected: record.states.len(),
                found: c.terms.len(),
            });
        }
    }
    let scale_correction = corrections.is_none_or(|c| c.scale_by_repeats);
    let parts = state_contributions(record, corrections, phi);

    let (mut num, mut den) = (0.0, 0.0);
    for (p, &d) in parts.iter().zip(&record.repeats) {
        let d = d as f64;
        let m = if scale_correction { d } else { 1.0 };
        num += d * p.coarse.0 + m * p.correction.0;
        den += d * p.coarse.1 + m * p.correction.1;
    }
    if den == 0.0 || !den.is_finite() || !num.is_finite() {
        return Err(Error::ZeroDenominator);
    }

    let per_iteration_value = scale_correction.then(|| {
        let (mut n18, mut d18) = (0.0, 0.0);
        for &k in &record.visits {
            let p = &parts[k];
            n18 += p.coarse.0 + p.correction.0;
            d18 += p.coarse.1 + p.correction.1;
        }
        n18 / d18
    });
    let value = num / den;
    if let Some(v18) = per_iteration_value {
        debug_assert!(
            (v18 - value).abs() <= 1e-12 * value.abs().max(f64::MIN_POSITIVE),
            "grouped {value} and per-iteration {v18} estimates differ"
        );
    }

    Ok(UnbiasedEstimate {
        value,
        numerator: num,
        denominator: den,
        per_iteration_value,
        levels: corrections.map_or_else(Vec::new, |c| c.terms.iter().map(|t| t.level).collect()),
        pmmh_steps: record.steps,
        correction_steps: corrections.map_or(0, |c| c.steps),
        wall_seconds: 0.0,
    })
}

/// Settings for [`run_unbiased`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedConfig {
    pub l_min: u32,
    pub pmf: LevelPmf,
    /// `N̄`, particles for the coarse PMMH filter.
    pub coarse_particles: usize,
    pub pmmh: PmmhConfig,
    pub correction: CorrectionOptions,
}

/// Estimate plus chain summary from one end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedRun {
    pub estimate: UnbiasedEstimate,
    pub distinct_states: usize,
    pub accept_rate: f64,
}

/// Part 1 on `key`'s own stream, Part 2 task `k` on `key.child(k)`.
pub fn run_unbiased(
    hmm: &HmmSpec,
    param: &dyn ParamModel,
    config: &UnbiasedConfig,
    key: &StreamKey,
    phi: &dyn Fn(&[f64], &[f64]) -> f64,
) -> Result<UnbiasedRun> {
    if config.pmf.support().start() != &(config.l_min + 1) {
        return Err(Error::invalid("pmf", "support must start at l_min + 1"));
    }
    let start = Instant::now();
    let estimator = PfEvidence {
        hmm,
        level: config.l_min,
        particles: config.coarse_particles,
        storage: config.correction.storage,
    };
    let mut rng = key.rng();
    let record = pmmh_run(&estimator, param, &config.pmmh, &mut rng)?;
    let corrections = is_correction(&record, hmm, &config.pmf, &config.correction, key)?;
    let mut estimate = assemble_estimate(&record, Some(&corrections), phi)?;
    estimate.wall_seconds = start.elapsed().as_secs_f64();
    Ok(UnbiasedRun {
        estimate,
        distinct_states: record.distinct(),
        accept_rate: record.accept_rate(),
    })
}
