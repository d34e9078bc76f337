//! Lévy triplets, jump measures, and per-level truncation constants.
//!
//! At level `l` the time step is `Δ_l = 2^-l` and jumps smaller than a threshold
//! `δ_l` are dropped, where `δ_l` is chosen so the retained jumps arrive at rate
//! `λ_l = ν(|x| ≥ δ_l) = 2^l`. The retained jumps form a compound Poisson process
//! with height law `μ^l(dx) = 1{|x| ≥ δ_l} ν(dx) / λ_l`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// A Lévy measure on `R^r \ {0}`, seen through the quantities the level
/// discretization needs.
pub trait LevyMeasure: Send + Sync + fmt::Debug {
    /// Dimension `r` of the jumps.
    fn dim(&self) -> usize;

    /// Radius beyond which the measure has no mass (`f64::INFINITY` if unbounded).
    fn support_radius(&self) -> f64;

    /// `λ(δ) = ν(|x| ≥ δ)`, strictly decreasing in `δ` on the support.
    fn tail_mass(&self, delta: f64) -> f64;

    /// `F₀(δ) = ∫_{|x| ≥ δ} x ν(dx)`.
    fn large_jump_mean(&self, delta: f64) -> Vec<f64>;

    /// `σ²(δ) = ∫_{|x| < δ} |x|² ν(dx)`.
    fn small_jump_variance(&self, delta: f64) -> Result<f64>;

    /// Draw one jump from `μ^l` into `out` (length `dim()`).
    fn sample_jump(&self, level: &LevelParams, rng: &mut dyn RngCore, out: &mut [f64]);

    /// Threshold `δ` with `λ(δ) = intensity`.
    ///
    /// The default bisects on `(ε_machine, u)` to a relative tolerance of 1e-12.
    fn threshold_for_intensity(&self, intensity: f64) -> Result<f64> {
        bisect_threshold(self, intensity)
    }
}

const BISECTION_RTOL: f64 = 1e-12;

fn bisect_threshold<M: LevyMeasure + ?Sized>(measure: &M, target: f64) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::invalid(
            "intensity",
            format!("{target} is not a positive finite rate"),
        ));
    }
    let mut lo = f64::EPSILON;
    let mut hi = measure.support_radius();
    if !hi.is_finite() {
        hi = 1.0;
        let mut guard = 0;
        while measure.tail_mass(hi) > target {
            hi *= 2.0;
            guard += 1;
            if guard > 1100 {
                return Err(Error::NoThreshold { target, upper: hi });
            }
        }
    }
    if measure.tail_mass(lo) < target || measure.tail_mass(hi) > target {
        return Err(Error::NoThreshold { target, upper: hi });
    }
    while hi - lo > BISECTION_RTOL * hi {
        let mid = 0.5 * (lo + hi);
        if measure.tail_mass(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Symmetric truncated stable measure on the real line:
/// `ν(dx) = c |x|^{-1-α} 1{0 < |x| ≤ u} dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedStable {
    c: f64,
    alpha: f64,
    u: f64,
    u_pow: f64,
    /// `1/α` when it is a small integer, so the inverse CDF can use `powi`.
    inv_alpha_int: Option<i32>,
}

impl TruncatedStable {
    pub fn new(c: f64, alpha: f64, u: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("c", format!("{c} must be positive")));
        }
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::invalid(
                "alpha",
                format!("{alpha} must lie in (0, 2)"),
            ));
        }
        if !(u >= 1.0 && u.is_finite()) {
            return Err(Error::invalid(
                "u",
                format!("{u} must be finite and at least 1"),
            ));
        }
        let inv = 1.0 / alpha;
        let inv_alpha_int = (inv.fract() == 0.0 && inv <= 64.0).then_some(inv as i32);
        Ok(Self {
            c,
            alpha,
            u,
            u_pow: u.powf(-alpha),
            inv_alpha_int,
        })
    }

    /// `x^{-1/α}`.
    fn pow_neg_inv_alpha(&self, x: f64) -> f64 {
        match self.inv_alpha_int {
            Some(k) => x.powi(-k),
            None => x.powf(-1.0 / self.alpha),
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    /// `c / (λ α)`, the scale of both CDF branches.
    fn branch_scale(&self, level: &LevelParams) -> f64 {
        self.c / (level.intensity * self.alpha)
    }

    /// CDF of the level-`l` jump-height law `μ^l`. Clamped to 0 below `-u` and 1
    /// above `u`; flat at 1/2 across the gap `(-δ_l, δ_l)`.
    pub fn jump_height_cdf(&self, level: &LevelParams, x: f64) -> f64 {
        let u_pow = self.u.powf(-self.alpha);
        let scale = self.branch_scale(level);
        if x <= -self.u {
            0.0
        } else if x <= -level.threshold {
            scale * ((-x).powf(-self.alpha) - u_pow)
        } else if x < level.threshold {
            0.5
        } else if x < self.u {
            1.0 - scale * (x.powf(-self.alpha) - u_pow)
        } else {
            1.0
        }
    }

    /// Inverse of [`jump_height_cdf`](Self::jump_height_cdf). `v ≤ 1/2` maps to the
    /// negative branch, so `v = 1/2` gives `-δ_l`.
    pub fn inverse_cdf(&self, level: &LevelParams, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let inv_scale = level.intensity * self.alpha / self.c;
        if v <= 0.5 {
            -self.pow_neg_inv_alpha(inv_scale * v + self.u_pow)
        } else {
            self.pow_neg_inv_alpha(inv_scale * (1.0 - v) + self.u_pow)
        }
    }

    /// Closed-form threshold `δ = (α / (2 c Δ) + u^{-α})^{-1/α}` for `λ = 1/Δ`.
    pub fn closed_form_threshold(&self, intensity: f64) -> f64 {
        (self.alpha * intensity / (2.0 * self.c) + self.u.powf(-self.alpha)).powf(-1.0 / self.alpha)
    }
}

impl LevyMeasure for TruncatedStable {
    fn dim(&self) -> usize {
        1
    }

    fn support_radius(&self) -> f64 {
        self.u
    }

    fn tail_mass(&self, delta: f64) -> f64 {
        if delta >= self.u {
            return 0.0;
        }
        2.0 * self.c / self.alpha * (delta.powf(-self.alpha) - self.u.powf(-self.alpha))
    }

    fn large_jump_mean(&self, _delta: f64) -> Vec<f64> {
        vec![0.0]
    }

    fn small_jump_variance(&self, delta: f64) -> Result<f64> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::invalid("delta", format!("{delta} must be positive")));
        }
        let d = delta.min(self.u);
        Ok(2.0 * self.c / (2.0 - self.alpha) * d.powf(2.0 - self.alpha))
    }

    fn sample_jump(&self, level: &LevelParams, rng: &mut dyn RngCore, out: &mut [f64]) {
        let v: f64 = rng.random();
        out[0] = self.inverse_cdf(level, v);
    }

    fn threshold_for_intensity(&self, intensity: f64) -> Result<f64> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::invalid(
                "intensity",
                format!("{intensity} is not a positive finite rate"),
            ));
        }
        let delta = self.closed_form_threshold(intensity);
        if !(delta > 0.0 && delta < self.u) {
            return Err(Error::NoThreshold {
                target: intensity,
                upper: self.u,
            });
        }
        Ok(delta)
    }
}

/// All constants of discretization level `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub level: u32,
    /// `Δ_l = 2^-l`.
    pub step: f64,
    /// `δ_l`.
    pub threshold: f64,
    /// `λ_l = 1/Δ_l`.
    pub intensity: f64,
    /// `F₀^l`.
    pub jump_mean: Vec<f64>,
}

pub const MAX_LEVEL: u32 = 52;

pub fn level_params(measure: &dyn LevyMeasure, level: u32) -> Result<LevelParams> {
    if level > MAX_LEVEL {
        return Err(Error::invalid(
            "level",
            format!("{level} exceeds {MAX_LEVEL}"),
        ));
    }
    let intensity = (1u64 << level) as f64;
    let step = 1.0 / intensity;
    let threshold = measure.threshold_for_intensity(intensity)?;
    if !(threshold > 0.0 && threshold < measure.support_radius()) {
        return Err(Error::NoThreshold {
            target: intensity,
            upper: measure.support_radius(),
        });
    }
    Ok(LevelParams {
        level,
        step,
        threshold,
        intensity,
        jump_mean: measure.large_jump_mean(threshold),
    })
}

/// `σ²(δ)` for any measure; free-function form of
/// [`LevyMeasure::small_jump_variance`].
pub fn small_jump_variance(measure: &dyn LevyMeasure, delta: f64) -> Result<f64> {
    measure.small_jump_variance(delta)
}

/// Level constants precomputed for `0..=max_level`.
#[derive(Debug, Clone)]
pub struct LevelTable {
    levels: Vec<LevelParams>,
}

impl LevelTable {
    pub fn new(measure: &dyn LevyMeasure, max_level: u32) -> Result<Self> {
        let levels = (0..=max_level)
            .map(|l| level_params(measure, l))
            .collect::<Result<Vec<_>>>()?;
        for pair in levels.windows(2) {
            if pair[1].threshold.partial_cmp(&pair[0].threshold) != Some(std::cmp::Ordering::Less) {
                return Err(Error::invalid(
                    "measure",
                    format!(
                        "thresholds not strictly decreasing between levels {} and {}",
                        pair[0].level, pair[1].level
                    ),
                ));
            }
        }
        Ok(Self { levels })
    }

    pub fn max_level(&self) -> u32 {
        (self.levels.len() - 1) as u32
    }

    pub fn get(&self, level: u32) -> Result<&LevelParams> {
        self.levels
            .get(level as usize)
            .ok_or(Error::LevelOutOfRange {
                level,
                max: self.max_level(),
            })
    }

    /// `(fine, coarse)` constants for levels `l` and `l - 1`.
    pub fn pair(&self, fine: u32) -> Result<(&LevelParams, &LevelParams)> {
        if fine == 0 {
            return Err(Error::LevelMismatch { fine, coarse: 0 });
        }
        Ok((self.get(fine)?, self.get(fine - 1)?))
    }
}

/// Generating triplet `(b, Σ, ν)` of the driving Lévy process
/// `X_t = t b + Σ^{1/2} W_t + L_t`.
#[derive(Debug, Clone)]
pub struct LevyTriplet {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    diffusion_sqrt: Vec<f64>,
    has_diffusion: bool,
    measure: Arc<dyn LevyMeasure>,
}

impl LevyTriplet {
    /// `diffusion` is the `r × r` covariance `Σ` in row-major order.
    pub fn new(
        drift: Vec<f64>,
        diffusion: Vec<f64>,
        measure: Arc<dyn LevyMeasure>,
    ) -> Result<Self> {
        let r = measure.dim();
        if r == 0 {
            return Err(Error::invalid(
                "measure",
                "jump dimension must be at least 1",
            ));
        }
        if drift.len() != r {
            return Err(Error::Misaligned {
                expected: r,
                found: drift.len(),
            });
        }
        if diffusion.len() != r * r {
            return Err(Error::Misaligned {
                expected: r * r,
                found: diffusion.len(),
            });
        }
        if drift.iter().chain(&diffusion).any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "triplet",
                "drift and diffusion must be finite",
            ));
        }
        let scale = diffusion.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..r {
            for j in 0..i {
                if (diffusion[i * r + j] - diffusion[j * r + i]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("diffusion", "covariance must be symmetric"));
                }
            }
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(r, r, &diffusion));
        if eig.eigenvalues.iter().any(|&e| e < -1e-12 * scale) {
            return Err(Error::invalid(
                "diffusion",
                "covariance must be nonnegative definite",
            ));
        }
        let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.max(0.0).sqrt()));
        let sqrt = &eig.eigenvectors * root * eig.eigenvectors.transpose();
        let diffusion_sqrt: Vec<f64> = (0..r)
            .flat_map(|i| (0..r).map(move |j| (i, j)))
            .map(|(i, j)| sqrt[(i, j)])
            .collect();
        let has_diffusion = diffusion.iter().any(|&v| v != 0.0);

        // Finite, positive total second moment of the jump measure.
        let second = measure.small_jump_variance(measure.support_radius().min(1e300))?;
        if !(second > 0.0 && second.is_finite()) {
            return Err(Error::invalid(
                "measure",
                format!("jump second moment {second} must be positive and finite"),
            ));
        }

        Ok(Self {
            drift,
            diffusion,
            diffusion_sqrt,
            has_diffusion,
            measure,
        })
    }

    /// Pure-jump triplet: `b = 0`, `Σ = 0`.
    pub fn pure_jump(measure: Arc<dyn LevyMeasure>) -> Result<Self> {
        let r = measure.dim();
        Self::new(vec![0.0; r], vec![0.0; r * r], measure)
    }

    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[f64] {
        &self.diffusion
    }

    /// Symmetric square root `Σ^{1/2}`, row-major.
    pub fn diffusion_sqrt(&self) -> &[f64] {
        &self.diffusion_sqrt
    }

    pub fn has_diffusion(&self) -> bool {
        self.has_diffusion
    }

    pub fn measure(&self) -> &Arc<dyn LevyMeasure> {
        &self.measure
    }
}
