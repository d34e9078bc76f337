//! Independent numerical oracles for the integration tests. Nothing here calls
//! into the crate's own numerics.

#![allow(dead_code)]

use std::sync::Arc;

use levy_infer::levy_model::{LevyMeasure, LevyTriplet, TruncatedStable};
use levy_infer::sde_euler::{DriftFn, Multiplicative, SdeModel};

pub const C: f64 = 0.8;
pub const ALPHA: f64 = 0.5;
pub const U: f64 = 1.0;

pub fn stable_measure() -> TruncatedStable {
    TruncatedStable::new(C, ALPHA, U).unwrap()
}

pub fn stable_model_with(coefficient: Arc<dyn DriftFn>, max_level: u32) -> SdeModel {
    let m: Arc<dyn LevyMeasure> = Arc::new(stable_measure());
    SdeModel::new(coefficient, LevyTriplet::pure_jump(m).unwrap(), max_level).unwrap()
}

pub fn stable_model(max_level: u32) -> SdeModel {
    stable_model_with(Arc::new(Multiplicative), max_level)
}

/// Lévy density `c |x|^{-1-α}` written out directly.
pub fn levy_density(x: f64) -> f64 {
    C * x.abs().powf(-1.0 - ALPHA)
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 60)
}

/// `∫_{δ ≤ |x| ≤ u} ν(dx)` by quadrature in the substitution `x = e^t`, which
/// turns the power-law blow-up at the origin into a smooth exponential.
pub fn quad_tail_mass(delta: f64) -> f64 {
    let g = |t: f64| t.exp() * levy_density(t.exp());
    let rough = 2.0 * simpson(&g, delta.ln(), U.ln(), 1e-6);
    2.0 * simpson(&g, delta.ln(), U.ln(), 1e-13 * rough)
}

/// `∫_{|x| < δ} x² ν(dx)`.
pub fn quad_small_variance(delta: f64) -> f64 {
    let g = |x: f64| {
        if x == 0.0 {
            0.0
        } else {
            x * x * levy_density(x)
        }
    };
    2.0 * simpson(&g, 0.0, delta, 1e-14)
}

/// `∫_{δ ≤ |x| ≤ u} x² ν(dx) / λ`, the second moment of a retained jump.
pub fn quad_jump_second_moment(delta: f64) -> f64 {
    let g = |x: f64| x * x * levy_density(x);
    2.0 * simpson(&g, delta, U, 1e-14) / quad_tail_mass(delta)
}

/// CDF of a retained jump by quadrature of the normalized density.
pub fn quad_jump_cdf(delta: f64, x: f64) -> f64 {
    let lambda = quad_tail_mass(delta);
    let g = |s: f64| 2.0 * s * levy_density(s * s);
    if x <= -U {
        0.0
    } else if x < -delta {
        simpson(&g, x.abs().sqrt(), U.sqrt(), 1e-13) / lambda
    } else if x < delta {
        0.5
    } else if x < U {
        1.0 - simpson(&g, x.sqrt(), U.sqrt(), 1e-13) / lambda
    } else {
        1.0
    }
}

/// Oracle CDF at every point of the ascending slice `xs`, by integrating the
/// normalized density piecewise between consecutive points. Interval ends are
/// split at `±δ` and `±u`, where the density jumps.
pub fn quad_jump_cdf_sorted(delta: f64, xs: &[f64]) -> Vec<f64> {
    let lambda = quad_tail_mass(delta);
    let density = |x: f64| {
        if x.abs() >= delta && x.abs() <= U {
            levy_density(x) / lambda
        } else {
            0.0
        }
    };
    let breaks = [-U, -delta, delta, U];
    let mut out = Vec::with_capacity(xs.len());
    let mut pos = -U;
    let mut acc = 0.0;
    for &x in xs {
        let target = x.clamp(-U, U);
        while pos < target {
            let next = breaks
                .iter()
                .copied()
                .find(|&b| b > pos)
                .unwrap_or(U)
                .min(target);
            acc += simpson(&density, pos, next, 1e-15);
            pos = next;
        }
        out.push(acc.min(1.0));
    }
    out
}

/// KS p-value of ascending `samples` against CDF values `cdf` at those points.
pub fn ks_from_cdf_values(samples: &[f64], cdf: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &f) in cdf.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

/// Asymptotic Kolmogorov tail probability `P(K > t)`.
pub fn kolmogorov_q(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = (-2.0 * j * j * t * t).exp();
        sum += if (j as i64) % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS p-value.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> (f64, f64) {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sn = ne.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Closed-form `δ_l` for the test measure, re-derived from `λ(δ) = 2^l`.
pub fn oracle_threshold(l: u32) -> f64 {
    let step = (-(l as f64)).exp2();
    (ALPHA / (2.0 * C * step) + U.powf(-ALPHA)).powf(-1.0 / ALPHA)
}

/// `σ²(δ) = 2c δ^{2-α} / (2-α)`.
pub fn oracle_sigma2(delta: f64) -> f64 {
    2.0 * C * delta.powf(2.0 - ALPHA) / (2.0 - ALPHA)
}

/// Exact `E|Y₁^l - Y₁^{l-1}|²` for `dY = θ Y dX` with pure-jump `X` and
/// `y₀ = 1`.
///
/// The Euler product factorizes over jumps: coarse jumps appear in both
/// products, the fine-only jumps (with `δ_l ≤ |h| < δ_{l-1}`) only in the fine
/// one. Each jump arrives as a Poisson mark, so for independent marks
/// `E Π(1 + θh)² = exp(λ E[(1+θh)² - 1]) = exp(θ² ∫ h² ν(dh))` over its band
/// (the linear term cancels by symmetry). Writing `A` for the coarse product and
/// `B` for the fine-only product, `E(A B - A)² = E A² (E B² - 1)`.
pub fn oracle_strong_error(theta: f64, l: u32) -> f64 {
    let d_f = oracle_threshold(l);
    let d_c = oracle_threshold(l - 1);
    let total = oracle_sigma2(U);
    let coarse_band = total - oracle_sigma2(d_c);
    let fine_band = oracle_sigma2(d_c) - oracle_sigma2(d_f);
    (theta * theta * coarse_band).exp() * ((theta * theta * fine_band).exp() - 1.0)
}

/// Batch-means standard error of the mean of a correlated series.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    mean_se(&means).1
}
