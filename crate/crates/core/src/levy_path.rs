//! Jump schedules for the truncated compound Poisson component on `[0, 1]`.
//!
//! A schedule is the jump-adapted grid `0 = T_0 < T_1 < ... < T_K = 1`: every
//! retained jump time is a grid point, and further points are inserted so no
//! cell is longer than `Δ_l`. Each point carries the jump height that occurs
//! there, or zero at pure grid points.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::levy_model::{LevelParams, LevyMeasure};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpSchedule {
    level: u32,
    step: f64,
    dim: usize,
    /// `T_1, ..., T_K`; `T_0 = 0` is implicit.
    times: Vec<f64>,
    /// `K × dim` heights aligned with `times`.
    heights: Vec<f64>,
    jumps: usize,
}

impl JumpSchedule {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of grid cells `K`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn height(&self, i: usize) -> &[f64] {
        &self.heights[i * self.dim..(i + 1) * self.dim]
    }

    /// Number of points carrying a nonzero jump.
    pub fn jump_count(&self) -> usize {
        self.jumps
    }

    /// `(t, height)` pairs of the actual jumps.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        (0..self.len())
            .map(move |i| (self.times[i], self.height(i)))
            .filter(|(_, h)| h.iter().any(|&x| x != 0.0))
    }

    /// Cell lengths `T_i - T_{i-1}`.
    pub fn cell_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        let mut prev = 0.0;
        self.times.iter().map(move |&t| {
            let dt = t - prev;
            prev = t;
            dt
        })
    }

    /// Dump as CSV with columns `t,dL` (one `dL` column per jump coordinate).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        if self.dim == 1 {
            out.push_str(",dL\n");
        } else {
            for j in 0..self.dim {
                out.push_str(&format!(",dL{j}"));
            }
            out.push('\n');
        }
        for i in 0..self.len() {
            out.push_str(&format!("{:.17e}", self.times[i]));
            for h in self.height(i) {
                out.push_str(&format!(",{h:.17e}"));
            }
            out.push('\n');
        }
        out
    }

    fn reset(&mut self, level: u32, step: f64, dim: usize) {
        self.level = level;
        self.step = step;
        self.dim = dim;
        self.times.clear();
        self.heights.clear();
        self.jumps = 0;
    }

    /// Rebuild as the refinement of sorted raw jumps `raw_times` (heights in
    /// `raw_heights`) with maximal spacing `step`. A raw jump that coincides with
    /// a grid point takes that point.
    fn refine(
        &mut self,
        level: u32,
        step: f64,
        dim: usize,
        raw_times: &[f64],
        raw_heights: &[f64],
    ) {
        self.reset(level, step, dim);
        let mut prev = 0.0f64;
        let mut next = 0usize;
        loop {
            let grid = (prev + step).min(1.0);
            if next < raw_times.len() && raw_times[next] <= grid {
                let t = raw_times[next];
                self.times.push(t);
                self.heights
                    .extend_from_slice(&raw_heights[next * dim..(next + 1) * dim]);
                self.jumps += 1;
                next += 1;
                prev = t;
            } else {
                self.times.push(grid);
                self.heights.extend(std::iter::repeat_n(0.0, dim));
                prev = grid;
            }
            if prev >= 1.0 {
                break;
            }
        }
    }
}

/// Reusable buffers for raw arrivals.
#[derive(Debug, Default, Clone)]
pub struct ScheduleScratch {
    raw_times: Vec<f64>,
    raw_heights: Vec<f64>,
    multiplicity: Vec<u32>,
    buf: Vec<f64>,
}

/// Poisson(`λ_l`) arrivals on `[0, 1]` with heights from `μ^l`. Arrival times
/// are drawn first, then heights, in arrival order. An arrival landing exactly
/// on 1 is kept as a jump.
fn draw_raw_jumps(
    level: &LevelParams,
    measure: &dyn LevyMeasure,
    rng: &mut dyn RngCore,
    scratch: &mut ScheduleScratch,
) {
    let dim = measure.dim();
    scratch.raw_times.clear();
    scratch.raw_heights.clear();
    scratch.multiplicity.clear();
    let mut t = 0.0f64;
    loop {
        let v: f64 = rng.random();
        t += -(1.0 - v).ln() / level.intensity;
        if t > 1.0 {
            break;
        }
        // A zero gap repeats the previous time; such arrivals share one slot.
        if scratch.raw_times.last() == Some(&t) {
            *scratch.multiplicity.last_mut().unwrap() += 1;
        } else {
            scratch.raw_times.push(t);
            scratch.multiplicity.push(1);
        }
        if t == 1.0 {
            break;
        }
    }
    scratch
        .raw_heights
        .resize(scratch.raw_times.len() * dim, 0.0);
    scratch.buf.resize(dim, 0.0);
    for (slot, &count) in scratch.multiplicity.iter().enumerate() {
        let target = &mut scratch.raw_heights[slot * dim..(slot + 1) * dim];
        if count == 1 {
            measure.sample_jump(level, rng, target);
            continue;
        }
        for _ in 0..count {
            measure.sample_jump(level, rng, &mut scratch.buf);
            for (acc, h) in target.iter_mut().zip(&scratch.buf) {
                *acc += h;
            }
        }
    }
}

/// Single-level schedule at `level`.
pub fn single_level_schedule(
    level: &LevelParams,
    measure: &dyn LevyMeasure,
    rng: &mut dyn RngCore,
) -> JumpSchedule {
    let mut schedule = JumpSchedule::default();
    let mut scratch = ScheduleScratch::default();
    single_level_schedule_into(level, measure, rng, &mut scratch, &mut schedule);
    schedule
}

/// As [`single_level_schedule`], reusing `out` and `scratch` allocations.
pub fn single_level_schedule_into(
    level: &LevelParams,
    measure: &dyn LevyMeasure,
    rng: &mut dyn RngCore,
    scratch: &mut ScheduleScratch,
    out: &mut JumpSchedule,
) {
    draw_raw_jumps(level, measure, rng, scratch);
    out.refine(
        level.level,
        level.step,
        measure.dim(),
        &scratch.raw_times,
        &scratch.raw_heights,
    );
}

/// Fine schedule at level `l` and the coarse schedule at `l - 1` built from it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoupledJumpSchedule {
    pub fine: JumpSchedule,
    pub coarse: JumpSchedule,
}

pub fn coupled_schedule(
    fine: &LevelParams,
    coarse: &LevelParams,
    measure: &dyn LevyMeasure,
    rng: &mut dyn RngCore,
) -> Result<CoupledJumpSchedule> {
    let mut out = CoupledJumpSchedule::default();
    let mut scratch = ScheduleScratch::default();
    coupled_schedule_into(fine, coarse, measure, rng, &mut scratch, &mut out)?;
    Ok(out)
}

/// As [`coupled_schedule`], reusing allocations. The fine half consumes `rng`
/// exactly as [`single_level_schedule`] does; the coarse half draws nothing.
pub fn coupled_schedule_into(
    fine: &LevelParams,
    coarse: &LevelParams,
    measure: &dyn LevyMeasure,
    rng: &mut dyn RngCore,
    scratch: &mut ScheduleScratch,
    out: &mut CoupledJumpSchedule,
) -> Result<()> {
    if coarse.level + 1 != fine.level {
        return Err(Error::LevelMismatch {
            fine: fine.level,
            coarse: coarse.level,
        });
    }
    single_level_schedule_into(fine, measure, rng, scratch, &mut out.fine);

    // Coarse raw jumps: fine jumps with |ΔL| ≥ δ_{l-1}, same times and heights.
    let dim = measure.dim();
    scratch.raw_times.clear();
    scratch.raw_heights.clear();
    for i in 0..out.fine.len() {
        let h = out.fine.height(i);
        let norm_sq: f64 = h.iter().map(|x| x * x).sum();
        if norm_sq > 0.0 && norm_sq.sqrt() >= coarse.threshold {
            scratch.raw_times.push(out.fine.times[i]);
            scratch.raw_heights.extend_from_slice(h);
        }
    }
    out.coarse.refine(
        coarse.level,
        coarse.step,
        dim,
        &scratch.raw_times,
        &scratch.raw_heights,
    );
    Ok(())
}
