//! Stability certificates for stochastic Lotka-Volterra systems with discrete
//! and distributed delays.
//!
//! The crate assembles a linear matrix inequality in diagonal Lyapunov-Krasovskii
//! weights, decides its strict feasibility, sweeps delay scales for maximum
//! allowable delay bounds and simulates the stochastic delay system to compare
//! certificates against sample paths.

// NaN must fail validity checks, hence `!(x > 0.0)` rather than `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod lmi;
pub mod model;
pub mod sim;
pub mod solver;
pub mod sweep;

pub use model::{derive, equilibrium_from_target, DerivedModel, EquilibriumMode, ModelError, ModelSpec};

/// Worker count for parallel sweeps and ensembles, capped by `LVSTAB_THREADS`.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    std::env::var("LVSTAB_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .map(|cap| cap.min(available))
        .unwrap_or(available)
}

pub(crate) fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
