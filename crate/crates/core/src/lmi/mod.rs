//! Assembly of the delay-dependent stability LMI.
//!
//! The extended state is `xi = (x, x_d_tilde, x_dist_tilde, z_dist)` with the
//! discrete and distributed delay channels expressed as deviations from the
//! replicated current state. The stability matrix is linear in the diagonals of
//! `P`, `Q`, `R`, `S` and is exposed both as a dense sum of four blocks
//! ([`sigma`]) and as per-variable sparse coefficients ([`problem`]).

pub mod problem;
pub mod selectors;
pub mod sigma;

pub use problem::{build_problem, var_label, DecisionVars, LmiProblem, Sigma4Mode, SymSparse};
pub use selectors::{build_lifts, build_selectors, DiagonalLifts, ExtendedLayout, SelectorSet};
pub use sigma::{assemble_sigma, assemble_sigma1, assemble_sigma2, assemble_sigma3, assemble_sigma4};
