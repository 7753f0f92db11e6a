//! Feasibility search for the stability LMI and the eigensolver that
//! certifies its answers.

pub mod eigen;
pub mod feasibility;

pub use eigen::{sym_eig, EigenError, SymEigResult};
pub use feasibility::{
    certify, solve_feasibility, FeasibilityStatus, FeasibilityVerdict, IterationRecord,
    SolveOptions, SolverError, Termination,
};
