//! Unbiased Bayesian inference for hidden Markov models whose latent state is a
//! Lévy-driven SDE.
//!
//! The crate is layered bottom-up:
//!
//! - [`levy_model`]: Lévy triplets, measures, and per-level truncation constants.
//! - [`levy_path`]: jump schedules of the truncated compound Poisson part, single
//!   level and coupled across consecutive levels.
//! - [`sde_euler`]: jump-adapted Euler propagation over one unit of time, coupled
//!   propagation, and a plain multilevel Monte Carlo estimator for diagnostics.
//! - [`smc`]: particle filter, coupled particle filter and the signed-weight
//!   level-difference estimator.
//! - [`inference`]: coarse-level PMMH plus randomized-level importance correction,
//!   assembled into a discretization-unbiased posterior expectation.
//!
//! Randomness is always supplied by the caller through [`rng::SimRng`] streams so
//! every run is reproducible from a master seed regardless of thread count.

pub mod diagnostics;
pub mod error;
pub mod inference;
pub mod levy_model;
pub mod levy_path;
pub mod rng;
pub mod sde_euler;
pub mod smc;

pub use error::{Error, Result};
