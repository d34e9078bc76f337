//! Jump-adapted Euler scheme for `dY_t = f_θ(Y_{t-}) dX_t` over one unit of time.
//!
//! On each cell of a [`JumpSchedule`] the Lévy increment is
//! `ΔX_i = (b - F₀^l) ΔT_i + Σ^{1/2} ΔW_i + ΔL_i` and the state moves by
//! `Y_i = Y_{i-1} + f_θ(Y_{i-1}) ΔX_i`. The coefficient is evaluated at the
//! left (pre-jump) point; this is the Itô convention, not Marcus.
//!
//! The multiplicative model `f_θ(y) = θ y` is unbounded, so the Lipschitz and
//! boundedness conditions usually placed on `f_θ` do not hold for it. It is
//! provided as-is; blow-ups are reported as [`Error::NonFiniteState`].

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::levy_model::{LevelParams, LevelTable, LevyTriplet};
use crate::levy_path::{
    coupled_schedule_into, single_level_schedule_into, CoupledJumpSchedule, JumpSchedule,
    ScheduleScratch,
};

/// Coefficient `y ↦ f_θ(y)`, a `d × r` matrix written row-major into `out`.
pub trait DriftFn: Send + Sync + fmt::Debug {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn eval(&self, theta: &[f64], y: &[f64], out: &mut [f64]);
}

/// `f_θ(y) = θ₀ · y` for scalar state and noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct Multiplicative;

impl DriftFn for Multiplicative {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn eval(&self, theta: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * y[0];
    }
}

/// `f_θ ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroCoefficient {
    pub state_dim: usize,
    pub noise_dim: usize,
}

impl DriftFn for ZeroCoefficient {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn eval(&self, _theta: &[f64], _y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Coefficient, driving triplet, and precomputed level constants.
#[derive(Debug, Clone)]
pub struct SdeModel {
    coefficient: Arc<dyn DriftFn>,
    triplet: LevyTriplet,
    levels: LevelTable,
}

impl SdeModel {
    pub fn new(
        coefficient: Arc<dyn DriftFn>,
        triplet: LevyTriplet,
        max_level: u32,
    ) -> Result<Self> {
        if coefficient.noise_dim() != triplet.dim() {
            return Err(Error::Misaligned {
                expected: triplet.dim(),
                found: coefficient.noise_dim(),
            });
        }
        if coefficient.state_dim() == 0 {
            return Err(Error::invalid(
                "coefficient",
                "state dimension must be at least 1",
            ));
        }
        let levels = LevelTable::new(triplet.measure().as_ref(), max_level)?;
        Ok(Self {
            coefficient,
            triplet,
            levels,
        })
    }

    pub fn coefficient(&self) -> &Arc<dyn DriftFn> {
        &self.coefficient
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn levels(&self) -> &LevelTable {
        &self.levels
    }

    pub fn state_dim(&self) -> usize {
        self.coefficient.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.triplet.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitPathResult {
    pub terminal: Vec<f64>,
    /// Euler steps taken (grid cells).
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledUnitPathResult {
    pub fine: Vec<f64>,
    pub coarse: Vec<f64>,
    pub fine_steps: u64,
    pub coarse_steps: u64,
}

/// `ΔX_i = (b - F₀^l)(T_i - T_{i-1}) + Σ^{1/2} ΔW_i + ΔL_i` for every cell.
///
/// `brownian` holds `K × r` increments `ΔW_i ~ N(0, ΔT_i I_r)` aligned with the
/// schedule. Returns `K × r` increments.
pub fn assemble_increments(
    schedule: &JumpSchedule,
    triplet: &LevyTriplet,
    level: &LevelParams,
    brownian: &[f64],
) -> Result<Vec<f64>> {
    let r = triplet.dim();
    if schedule.dim() != r {
        return Err(Error::Misaligned {
            expected: r,
            found: schedule.dim(),
        });
    }
    if brownian.len() != schedule.len() * r {
        return Err(Error::Misaligned {
            expected: schedule.len() * r,
            found: brownian.len(),
        });
    }
    if level.jump_mean.len() != r {
        return Err(Error::Misaligned {
            expected: r,
            found: level.jump_mean.len(),
        });
    }
    let mut out = Vec::with_capacity(schedule.len() * r);
    assemble_into(
        schedule,
        triplet,
        &level.jump_mean,
        Some(brownian),
        &mut out,
    );
    Ok(out)
}

/// Core of [`assemble_increments`]. `brownian = None` means `Σ = 0` and skips
/// the diffusion term entirely.
fn assemble_into(
    schedule: &JumpSchedule,
    triplet: &LevyTriplet,
    jump_mean: &[f64],
    brownian: Option<&[f64]>,
    out: &mut Vec<f64>,
) {
    let r = triplet.dim();
    let b = triplet.drift();
    let sqrt = triplet.diffusion_sqrt();
    let compensated_drift = b.iter().zip(jump_mean).any(|(bi, fi)| bi - fi != 0.0);
    out.clear();
    for (i, dt) in schedule.cell_lengths().enumerate() {
        let h = schedule.height(i);
        for j in 0..r {
            let mut dx = h[j];
            if compensated_drift {
                dx += (b[j] - jump_mean[j]) * dt;
            }
            if let Some(w) = brownian {
                let row = &sqrt[j * r..(j + 1) * r];
                let dw = &w[i * r..(i + 1) * r];
                dx += row.iter().zip(dw).map(|(s, w)| s * w).sum::<f64>();
            }
            out.push(dx);
        }
    }
}

/// Run the Euler recursion over `increments` (`K × r`) in place on `y`.
/// Cells with an all-zero increment leave `y` unchanged and skip the
/// coefficient evaluation.
fn euler_recursion(
    coefficient: &dyn DriftFn,
    theta: &[f64],
    y: &mut [f64],
    increments: &[f64],
    level: u32,
    coef: &mut Vec<f64>,
) -> Result<()> {
    let d = y.len();
    let r = coefficient.noise_dim();
    coef.resize(d * r, 0.0);
    for (step, dx) in increments.chunks_exact(r).enumerate() {
        if dx.iter().all(|&v| v == 0.0) {
            continue;
        }
        coefficient.eval(theta, y, coef);
        for (a, yi) in y.iter_mut().enumerate() {
            let row = &coef[a * r..(a + 1) * r];
            *yi += row.iter().zip(dx).map(|(f, x)| f * x).sum::<f64>();
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { level, step });
        }
    }
    Ok(())
}

/// Reusable buffers for repeated propagation.
#[derive(Debug, Default, Clone)]
pub struct PropagationScratch {
    schedule: ScheduleScratch,
    single: JumpSchedule,
    coupled: CoupledJumpSchedule,
    merged_times: Vec<f64>,
    merged_dw: Vec<f64>,
    fine_dw: Vec<f64>,
    coarse_dw: Vec<f64>,
    fine_dx: Vec<f64>,
    coarse_dx: Vec<f64>,
    coef: Vec<f64>,
}

fn gaussian_cells(times: &[f64], r: usize, rng: &mut dyn RngCore, out: &mut Vec<f64>) {
    out.clear();
    let mut prev = 0.0;
    for &t in times {
        let sd = (t - prev).sqrt();
        prev = t;
        for _ in 0..r {
            let z: f64 = StandardNormal.sample(rng);
            out.push(sd * z);
        }
    }
}

/// Advance `y` by one unit of time at `level`, in place. Returns the number of
/// Euler steps.
pub fn propagate_unit_in_place(
    y: &mut [f64],
    theta: &[f64],
    level: &LevelParams,
    model: &SdeModel,
    rng: &mut dyn RngCore,
    scratch: &mut PropagationScratch,
) -> Result<u64> {
    let triplet = model.triplet();
    let r = triplet.dim();
    single_level_schedule_into(
        level,
        triplet.measure().as_ref(),
        rng,
        &mut scratch.schedule,
        &mut scratch.single,
    );
    let brownian = if triplet.has_diffusion() {
        gaussian_cells(scratch.single.times(), r, rng, &mut scratch.fine_dw);
        Some(scratch.fine_dw.as_slice())
    } else {
        None
    };
    assemble_into(
        &scratch.single,
        triplet,
        &level.jump_mean,
        brownian,
        &mut scratch.fine_dx,
    );
    euler_recursion(
        model.coefficient().as_ref(),
        theta,
        y,
        &scratch.fine_dx,
        level.level,
        &mut scratch.coef,
    )?;
    Ok(scratch.single.len() as u64)
}

/// `Y_1^l` from `Y_0 = y0`.
pub fn propagate_unit(
    y0: &[f64],
    theta: &[f64],
    level: &LevelParams,
    model: &SdeModel,
    rng: &mut dyn RngCore,
) -> Result<UnitPathResult> {
    check_state(model, y0)?;
    let mut y = y0.to_vec();
    let mut scratch = PropagationScratch::default();
    let steps = propagate_unit_in_place(&mut y, theta, level, model, rng, &mut scratch)?;
    Ok(UnitPathResult { terminal: y, steps })
}

fn check_state(model: &SdeModel, y: &[f64]) -> Result<()> {
    if y.len() != model.state_dim() {
        return Err(Error::Misaligned {
            expected: model.state_dim(),
            found: y.len(),
        });
    }
    Ok(())
}

/// Brownian increments on the fine and coarse grids from one path.
///
/// The coarse grid is generally not a subset of the fine grid (the fine mesh
/// restarts after every fine jump), so the path is sampled on the union of both
/// grids and each grid's increments are sums over the union cells it covers.
fn coupled_brownian(scratch: &mut PropagationScratch, r: usize, rng: &mut dyn RngCore) {
    let fine = scratch.coupled.fine.times();
    let coarse = scratch.coupled.coarse.times();
    scratch.merged_times.clear();
    let (mut i, mut j) = (0, 0);
    while i < fine.len() || j < coarse.len() {
        let t = match (fine.get(i), coarse.get(j)) {
            (Some(&a), Some(&b)) if a == b => {
                i += 1;
                j += 1;
                a
            }
            (Some(&a), Some(&b)) if a < b => {
                i += 1;
                a
            }
            (Some(_), Some(&b)) => {
                j += 1;
                b
            }
            (Some(&a), None) => {
                i += 1;
                a
            }
            (None, Some(&b)) => {
                j += 1;
                b
            }
            (None, None) => unreachable!(),
        };
        scratch.merged_times.push(t);
    }
    gaussian_cells(&scratch.merged_times, r, rng, &mut scratch.merged_dw);

    for (grid, out) in [
        (scratch.coupled.fine.times(), &mut scratch.fine_dw),
        (scratch.coupled.coarse.times(), &mut scratch.coarse_dw),
    ] {
        out.clear();
        let mut acc = vec![0.0; r];
        let mut m = 0;
        for &t in grid {
            while m < scratch.merged_times.len() && scratch.merged_times[m] <= t {
                for (a, w) in acc.iter_mut().zip(&scratch.merged_dw[m * r..(m + 1) * r]) {
                    *a += w;
                }
                m += 1;
            }
            out.extend_from_slice(&acc);
            acc.fill(0.0);
        }
    }
}

/// Advance a fine/coarse pair by one unit of time with coupled randomness.
#[allow(clippy::too_many_arguments)]
pub fn propagate_unit_coupled_in_place(
    y_fine: &mut [f64],
    y_coarse: &mut [f64],
    theta: &[f64],
    fine: &LevelParams,
    coarse: &LevelParams,
    model: &SdeModel,
    rng: &mut dyn RngCore,
    scratch: &mut PropagationScratch,
) -> Result<(u64, u64)> {
    let triplet = model.triplet();
    let r = triplet.dim();
    coupled_schedule_into(
        fine,
        coarse,
        triplet.measure().as_ref(),
        rng,
        &mut scratch.schedule,
        &mut scratch.coupled,
    )?;
    let has_diffusion = triplet.has_diffusion();
    if has_diffusion {
        coupled_brownian(scratch, r, rng);
    }
    assemble_into(
        &scratch.coupled.fine,
        triplet,
        &fine.jump_mean,
        has_diffusion.then_some(scratch.fine_dw.as_slice()),
        &mut scratch.fine_dx,
    );
    assemble_into(
        &scratch.coupled.coarse,
        triplet,
        &coarse.jump_mean,
        has_diffusion.then_some(scratch.coarse_dw.as_slice()),
        &mut scratch.coarse_dx,
    );
    let coefficient = model.coefficient().as_ref();
    euler_recursion(
        coefficient,
        theta,
        y_fine,
        &scratch.fine_dx,
        fine.level,
        &mut scratch.coef,
    )?;
    euler_recursion(
        coefficient,
        theta,
        y_coarse,
        &scratch.coarse_dx,
        coarse.level,
        &mut scratch.coef,
    )?;
    Ok((
        scratch.coupled.fine.len() as u64,
        scratch.coupled.coarse.len() as u64,
    ))
}

/// `(Y_1^l, Y_1^{l-1})` from `(y0_fine, y0_coarse)`.
pub fn propagate_unit_coupled(
    y0_fine: &[f64],
    y0_coarse: &[f64],
    theta: &[f64],
    fine: &LevelParams,
    coarse: &LevelParams,
    model: &SdeModel,
    rng: &mut dyn RngCore,
) -> Result<CoupledUnitPathResult> {
    check_state(model, y0_fine)?;
    check_state(model, y0_coarse)?;
    let mut yf = y0_fine.to_vec();
    let mut yc = y0_coarse.to_vec();
    let mut scratch = PropagationScratch::default();
    let (fine_steps, coarse_steps) = propagate_unit_coupled_in_place(
        &mut yf,
        &mut yc,
        theta,
        fine,
        coarse,
        model,
        rng,
        &mut scratch,
    )?;
    Ok(CoupledUnitPathResult {
        fine: yf,
        coarse: yc,
        fine_steps,
        coarse_steps,
    })
}

/// Per-level output of [`mlmc_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlmcEstimate {
    pub value: f64,
    /// Level-0 mean, then the mean coupled difference at each level `1..=L`.
    pub level_means: Vec<f64>,
    /// Sample variances matching `level_means`.
    pub level_variances: Vec<f64>,
    pub steps: u64,
}

/// Telescoping multilevel estimate of `E[φ(Y_1^L)]` from `y0`: a plain average
/// at level 0 plus coupled-difference averages at levels `1..=L`. Diagnostic
/// only; `counts[l]` is the sample size at level `l`.
pub fn mlmc_estimate(
    phi: &dyn Fn(&[f64]) -> f64,
    max_level: u32,
    counts: &[usize],
    y0: &[f64],
    theta: &[f64],
    model: &SdeModel,
    rng: &mut dyn RngCore,
) -> Result<MlmcEstimate> {
    if counts.len() != max_level as usize + 1 {
        return Err(Error::Misaligned {
            expected: max_level as usize + 1,
            found: counts.len(),
        });
    }
    if counts.contains(&0) {
        return Err(Error::invalid(
            "counts",
            "every level needs at least one sample",
        ));
    }
    check_state(model, y0)?;
    let mut scratch = PropagationScratch::default();
    let mut steps = 0u64;
    let mut level_means = Vec::with_capacity(counts.len());
    let mut level_variances = Vec::with_capacity(counts.len());

    let base = model.levels().get(0)?;
    let mut samples = Vec::with_capacity(counts[0]);
    let mut y = y0.to_vec();
    for _ in 0..counts[0] {
        y.copy_from_slice(y0);
        steps += propagate_unit_in_place(&mut y, theta, base, model, rng, &mut scratch)?;
        samples.push(phi(&y));
    }
    let (m, v) = crate::diagnostics::mean_and_variance(&samples);
    level_means.push(m);
    level_variances.push(v);

    let mut yc = y0.to_vec();
    for l in 1..=max_level {
        let (fine, coarse) = model.levels().pair(l)?;
        samples.clear();
        for _ in 0..counts[l as usize] {
            y.copy_from_slice(y0);
            yc.copy_from_slice(y0);
            let (a, b) = propagate_unit_coupled_in_place(
                &mut y,
                &mut yc,
                theta,
                fine,
                coarse,
                model,
                rng,
                &mut scratch,
            )?;
            steps += a + b;
            samples.push(phi(&y) - phi(&yc));
        }
        let (m, v) = crate::diagnostics::mean_and_variance(&samples);
        level_means.push(m);
        level_variances.push(v);
    }
    Ok(MlmcEstimate {
        value: level_means.iter().sum(),
        level_means,
        level_variances,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{LevyMeasure, TruncatedStable};
    use crate::levy_path::single_level_schedule;
    use crate::rng::substream;

    fn stable_model(coefficient: Arc<dyn DriftFn>) -> SdeModel {
        let m: Arc<dyn LevyMeasure> = Arc::new(TruncatedStable::new(0.8, 0.5, 1.0).unwrap());
        SdeModel::new(coefficient, LevyTriplet::pure_jump(m).unwrap(), 12).unwrap()
    }

    #[test]
    fn pure_jump_increments_are_heights() {
        let model = stable_model(Arc::new(Multiplicative));
        let level = model.levels().get(4).unwrap();
        let mut rng = substream(11, &[]);
        let s = single_level_schedule(level, model.triplet().measure().as_ref(), &mut rng);
        let zero_w = vec![0.0; s.len()];
        let dx = assemble_increments(&s, model.triplet(), level, &zero_w).unwrap();
        assert_eq!(dx, s.heights());
    }

    #[test]
    fn compensator_cancels_drift() {
        let m: Arc<dyn LevyMeasure> = Arc::new(TruncatedStable::new(0.8, 0.5, 1.0).unwrap());
        // F₀ = 0 for the symmetric measure, so b = 0 cancels it.
        let triplet = LevyTriplet::new(vec![0.0], vec![1.0], m.clone()).unwrap();
        let level = crate::levy_model::level_params(m.as_ref(), 3).unwrap();
        let mut rng = substream(2, &[]);
        let s = single_level_schedule(&level, m.as_ref(), &mut rng);
        let w: Vec<f64> = (0..s.len()).map(|i| 0.01 * i as f64).collect();
        let dx = assemble_increments(&s, &triplet, &level, &w).unwrap();
        for i in 0..s.len() {
            assert!((dx[i] - s.height(i)[0] - w[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn telescoping_sum_of_increments() {
        let m: Arc<dyn LevyMeasure> = Arc::new(TruncatedStable::new(0.8, 0.5, 1.0).unwrap());
        let triplet = LevyTriplet::new(vec![0.7], vec![2.25], m.clone()).unwrap();
        let mut level = crate::levy_model::level_params(m.as_ref(), 3).unwrap();
        level.jump_mean = vec![0.2];
        let mut rng = substream(5, &[]);
        let s = single_level_schedule(&level, m.as_ref(), &mut rng);
        let w: Vec<f64> = (0..s.len())
            .map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.1)
            .collect();
        let dx = assemble_increments(&s, &triplet, &level, &w).unwrap();
        let total: f64 = dx.iter().sum();
        let expected = 0.5 * 1.0 + 1.5 * w.iter().sum::<f64>() + s.heights().iter().sum::<f64>();
        assert!((total - expected).abs() < 1e-12);
    }

    #[test]
    fn misaligned_brownian_rejected() {
        let model = stable_model(Arc::new(Multiplicative));
        let level = model.levels().get(2).unwrap();
        let mut rng = substream(1, &[]);
        let s = single_level_schedule(level, model.triplet().measure().as_ref(), &mut rng);
        let err = assemble_increments(&s, model.triplet(), level, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Misaligned { .. }) || s.len() == 1);
    }

    #[test]
    fn zero_coefficient_keeps_initial_state() {
        let model = stable_model(Arc::new(ZeroCoefficient {
            state_dim: 1,
            noise_dim: 1,
        }));
        let level = model.levels().get(6).unwrap();
        let mut rng = substream(9, &[]);
        let out = propagate_unit(&[3.5], &[0.5], level, &model, &mut rng).unwrap();
        assert_eq!(out.terminal, vec![3.5]);
        let (fine, coarse) = model.levels().pair(6).unwrap();
        let out =
            propagate_unit_coupled(&[1.0], &[2.0], &[0.5], fine, coarse, &model, &mut rng).unwrap();
        assert_eq!(out.fine, vec![1.0]);
        assert_eq!(out.coarse, vec![2.0]);
    }

    #[test]
    fn multiplicative_matches_euler_product() {
        let model = stable_model(Arc::new(Multiplicative));
        let level = model.levels().get(5).unwrap();
        let mut a = substream(21, &[]);
        let mut b = substream(21, &[]);
        let out = propagate_unit(&[1.3], &[0.5], level, &model, &mut a).unwrap();
        let s = single_level_schedule(level, model.triplet().measure().as_ref(), &mut b);
        let product = s.heights().iter().fold(1.3, |y, &h| y * (1.0 + 0.5 * h));
        assert!((out.terminal[0] - product).abs() <= 1e-14 * product.abs());
        assert_eq!(out.steps, s.len() as u64);
    }

    #[test]
    fn blowup_is_reported() {
        #[derive(Debug)]
        struct Explosive;
        impl DriftFn for Explosive {
            fn state_dim(&self) -> usize {
                1
            }
            fn noise_dim(&self) -> usize {
                1
            }
            fn eval(&self, _t: &[f64], y: &[f64], out: &mut [f64]) {
                out[0] = 1e200 * y[0] * y[0];
            }
        }
        let model = stable_model(Arc::new(Explosive));
        let level = model.levels().get(8).unwrap();
        let mut rng = substream(4, &[]);
        let err = propagate_unit(&[1e100], &[1.0], level, &model, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { level: 8, .. }));
    }

    #[test]
    fn mlmc_constant_phi_is_exact() {
        let model = stable_model(Arc::new(Multiplicative));
        let mut rng = substream(3, &[]);
        let est = mlmc_estimate(
            &|_| 2.5,
            3,
            &[10, 5, 5, 5],
            &[1.0],
            &[0.5],
            &model,
            &mut rng,
        )
        .unwrap();
        assert_eq!(est.value, 2.5);
    }

    #[test]
    fn mlmc_level_zero_is_plain_average() {
        let model = stable_model(Arc::new(Multiplicative));
        let mut a = substream(8, &[]);
        let mut b = substream(8, &[]);
        let est = mlmc_estimate(&|y| y[0], 0, &[50], &[1.0], &[0.5], &model, &mut a).unwrap();
        let level = model.levels().get(0).unwrap();
        let mut total = 0.0;
        for _ in 0..50 {
            total += propagate_unit(&[1.0], &[0.5], level, &model, &mut b)
                .unwrap()
                .terminal[0];
        }
        assert!((est.value - total / 50.0).abs() < 1e-14);
    }
}
