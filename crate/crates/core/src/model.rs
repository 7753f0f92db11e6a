//! Model data for the n-species stochastic Lotka-Volterra system with
//! discrete and distributed delays.
//!
//! ```text
//! du_i = u_i [ (rho_i - sum_j a_ij u_j - sum_j ad_ij u_j(t - tau_ij(t))
//!               - sum_j aD_ij int_{t-tau_ij}^{t} e^{alpha_ij (eta - t)} u_j(eta) deta) dt
//!            + sum_j sigma_ij (u_j - u*_j) dw_i ]
//! ```
//!
//! Every n x n parameter matrix is indexed by the ordered pair `(i, j)`; lifted
//! quantities of length n^2 use the flat index returned by [`pair_index`].

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Below this value of `|alpha * tau_bar|` the kernel mass uses a two-term series.
const BETA_SERIES_THRESHOLD: f64 = 1e-8;
/// Condition number above which the equilibrium solve is rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative residual bound for `A_tilde u* = rho`.
pub const EQUILIBRIUM_RESIDUAL_TOL: f64 = 1e-10;

/// Flat index of the pair `(i, j)` (zero-based) in lifted n^2 vectors:
/// `k = i * n + j`. Every lift, decision vector and simulator buffer goes
/// through this function.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < n && j < n);
    i * n + j
}

/// Inverse of [`pair_index`].
#[inline]
pub fn pair_of(n: usize, k: usize) -> (usize, usize) {
    (k / n, k % n)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("field `{field}` has shape {found}, expected {expected}")]
    Shape {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("field `{field}` is invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("effective interaction matrix is singular to working precision (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("equilibrium is not strictly positive: u* = {u_star:?}")]
    NonPositiveEquilibrium { u_star: Vec<f64> },
}

/// How the equilibrium of a model was obtained; stamped on every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquilibriumMode {
    /// Growth rates given, `u*` solved from `A_tilde u* = rho`.
    RhoGiven,
    /// `u*` given, growth rates implied as `rho = A_tilde u*`.
    UStarGiven,
}

impl EquilibriumMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EquilibriumMode::RhoGiven => "rho",
            EquilibriumMode::UStarGiven => "ustar",
        }
    }
}

impl std::fmt::Display for EquilibriumMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameters of the delayed stochastic model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Instantaneous interaction coefficients `a_ij`.
    pub a: DMatrix<f64>,
    /// Discrete-delay coefficients.
    pub a_d: DMatrix<f64>,
    /// Distributed-delay coefficients.
    pub a_dist: DMatrix<f64>,
    /// Intrinsic growth rates.
    pub rho: DVector<f64>,
    /// Decay rates of the exponential distributed-delay kernels.
    pub alpha: DMatrix<f64>,
    /// Delay upper bounds.
    pub tau_bar: DMatrix<f64>,
    /// Upper bounds on the delay derivatives.
    pub tau_bar_d: DMatrix<f64>,
    /// Noise intensities.
    pub sigma: DMatrix<f64>,
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        a_d: DMatrix<f64>,
        a_dist: DMatrix<f64>,
        rho: DVector<f64>,
        alpha: DMatrix<f64>,
        tau_bar: DMatrix<f64>,
        tau_bar_d: DMatrix<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        let spec = ModelSpec {
            a,
            a_d,
            a_dist,
            rho,
            alpha,
            tau_bar,
            tau_bar_d,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Species count.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.a.nrows();
        if n == 0 {
            return Err(ModelError::Invalid {
                field: "A",
                reason: "species count must be positive".into(),
            });
        }
        let square = [
            ("A", &self.a),
            ("A_d", &self.a_d),
            ("A_D", &self.a_dist),
            ("alpha", &self.alpha),
            ("tau_bar", &self.tau_bar),
            ("tau_bar_d", &self.tau_bar_d),
            ("sigma", &self.sigma),
        ];
        for (field, m) in square {
            if m.nrows() != n || m.ncols() != n {
                return Err(ModelError::Shape {
                    field,
                    expected: format!("{n}x{n}"),
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(invalid(field, "entries must be finite"));
            }
        }
        if self.rho.len() != n {
            return Err(ModelError::Shape {
                field: "rho",
                expected: format!("{n}"),
                found: format!("{}", self.rho.len()),
            });
        }
        if self.rho.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(invalid("rho", "growth rates must be strictly positive"));
        }
        if self.tau_bar.iter().any(|x| *x <= 0.0) {
            return Err(invalid("tau_bar", "delay bounds must be strictly positive"));
        }
        if self.alpha.iter().any(|x| *x < 0.0) {
            return Err(invalid("alpha", "kernel decay rates must be nonnegative"));
        }
        if self.sigma.iter().any(|x| *x < 0.0) {
            return Err(invalid("sigma", "noise intensities must be nonnegative"));
        }
        if self.tau_bar_d.iter().any(|x| *x >= 1.0) {
            return Err(invalid(
                "tau_bar_d",
                "delay-derivative bounds must be strictly below 1",
            ));
        }
        Ok(())
    }
}

fn invalid(field: &'static str, reason: &str) -> ModelError {
    ModelError::Invalid {
        field,
        reason: reason.to_string(),
    }
}

/// Quantities derived from a validated [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedModel {
    /// Kernel masses `beta_ij`.
    pub beta: DMatrix<f64>,
    /// Entrywise `beta_ij * aD_ij`.
    pub a_beta_dist: DMatrix<f64>,
    /// `A + A_d + A_beta_D`.
    pub a_tilde: DMatrix<f64>,
    /// Positive equilibrium.
    pub u_star: DVector<f64>,
    /// Largest delay bound.
    pub tau_bar_max: f64,
}

/// Mass of the kernel `e^{alpha (eta - t)}` over `[t - tau_bar, t]`.
pub fn beta_weight(alpha: f64, tau_bar: f64) -> f64 {
    let x = alpha * tau_bar;
    if x.abs() < BETA_SERIES_THRESHOLD {
        tau_bar * (1.0 - 0.5 * x)
    } else {
        -(-x).exp_m1() / alpha
    }
}

/// Entrywise [`beta_weight`].
pub fn compute_beta(alpha: &DMatrix<f64>, tau_bar: &DMatrix<f64>) -> DMatrix<f64> {
    alpha.zip_map(tau_bar, beta_weight)
}

fn effective_matrix(model: &ModelSpec, beta: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let a_beta_dist = beta.component_mul(&model.a_dist);
    let a_tilde = &model.a + &model.a_d + &a_beta_dist;
    (a_beta_dist, a_tilde)
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Derives kernel masses, the effective interaction matrix and the positive
/// equilibrium.
pub fn derive(model: &ModelSpec) -> Result<DerivedModel, ModelError> {
    model.validate()?;
    let beta = compute_beta(&model.alpha, &model.tau_bar);
    let (a_beta_dist, a_tilde) = effective_matrix(model, &beta);

    let condition = condition_number(&a_tilde);
    if !(condition <= MAX_CONDITION) {
        return Err(ModelError::SingularSystem { condition });
    }
    let lu = a_tilde.clone().lu();
    let mut u_star = lu
        .solve(&model.rho)
        .ok_or(ModelError::SingularSystem { condition })?;
    // one step of iterative refinement
    let residual = &model.rho - &a_tilde * &u_star;
    if let Some(correction) = lu.solve(&residual) {
        u_star += correction;
    }
    let residual = (&a_tilde * &u_star - &model.rho).norm() / model.rho.norm();
    if residual > EQUILIBRIUM_RESIDUAL_TOL {
        return Err(ModelError::SingularSystem { condition });
    }
    if u_star.iter().any(|x| *x <= 0.0) {
        return Err(ModelError::NonPositiveEquilibrium {
            u_star: u_star.iter().copied().collect(),
        });
    }
    let tau_bar_max = model.tau_bar.max();
    Ok(DerivedModel {
        beta,
        a_beta_dist,
        a_tilde,
        u_star,
        tau_bar_max,
    })
}

/// Returns a copy of `model` whose growth rates make `u_star` the equilibrium,
/// `rho = A_tilde u_star`.
///
/// Fails only when the implied growth rates are not strictly positive, which
/// would violate the model invariants.
pub fn equilibrium_from_target(
    model: &ModelSpec,
    u_star: &DVector<f64>,
) -> Result<ModelSpec, ModelError> {
    if u_star.len() != model.n() {
        return Err(ModelError::Shape {
            field: "u_star",
            expected: format!("{}", model.n()),
            found: format!("{}", u_star.len()),
        });
    }
    if u_star.iter().any(|x| !(*x > 0.0)) {
        return Err(invalid("u_star", "target equilibrium must be strictly positive"));
    }
    let beta = compute_beta(&model.alpha, &model.tau_bar);
    let (_, a_tilde) = effective_matrix(model, &beta);
    let mut out = model.clone();
    out.rho = a_tilde * u_star;
    if out.rho.iter().any(|x| !(*x > 0.0)) {
        return Err(invalid(
            "rho",
            "growth rates implied by the target equilibrium are not strictly positive",
        ));
    }
    Ok(out)
}
