//! Positivity-preserving simulation of the stochastic delay system and
//! evaluation of the Lyapunov-Krasovskii functional along paths.
//!
//! Paths advance `ln u` by Euler-Maruyama with the Ito correction, so every
//! stored state is positive by construction.

pub mod delay;
pub mod ensemble;
pub mod history;
pub mod lkf;
pub mod report;
pub mod step;

use thiserror::Error;

use crate::model::ModelError;

pub use delay::{DelayFunctionSpec, DelayKind};
pub use ensemble::{default_dt, run_ensemble, PathEnsemble, PathRecord, SimOptions, SummaryRow};
pub use history::{distributed_kernel, HistoryBuffer, InitialHistory, KernelAccumulator, KernelStencil};
pub use lkf::{evaluate_lkf, LkfValue};
pub use report::{render_summary_csv, render_svg, render_timeseries_csv};
pub use step::{brownian_increments, step_log_em, StepContext, LOG_OVERFLOW};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("log-state of species {} reached {log_state:e} at t = {time}; path abandoned as numerical blow-up", species + 1)]
    Overflow { species: usize, time: f64, log_state: f64 },
    #[error("functional undefined: {0}")]
    Domain(String),
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
