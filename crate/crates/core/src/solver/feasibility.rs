//! Strict feasibility of `Sigma(v) < 0` over positive decision scalars.
//!
//! Because `Sigma` is homogeneous in `v`, the search is restricted to the
//! floored simplex `{v >= eps_pos, sum v = 1}` and minimizes
//! `f(v) = lambda_max(Sigma(v))`. The minimization runs a log-det barrier
//! method on the epigraph form
//!
//! ```text
//! min  b   s.t.  b I - Sigma(v) > 0,  v_i > eps_pos,  sum v = 1
//! ```
//!
//! with damped Newton centering. Each centered point yields a dual bound
//! `b - (N + m) / t` on the optimum. Every verdict is re-checked with the
//! Jacobi eigensolver on a freshly evaluated `Sigma(v)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::eigen::{sym_eig, EigenError};
use crate::lmi::{DecisionVars, LmiProblem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("decision vector must be strictly positive with length {expected}")]
    InvalidPoint { expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Cap on barrier stages (outer iterations).
    pub max_outer_iterations: usize,
    /// Cap on Newton steps per barrier stage.
    pub max_newton_steps: usize,
    /// Floor on each decision variable, relative to `sum v = 1`.
    pub eps_pos: f64,
    /// Strictness margin relative to the spectral norm of `Sigma(v)`.
    pub eps_neg_rel: f64,
    /// Stop once the duality-gap bound drops below this times the initial scale.
    pub gap_tol_rel: f64,
    /// Barrier weight growth per stage.
    pub barrier_growth: f64,
    /// Random restarts attempted after a stalled run.
    pub restarts: usize,
    pub seed: u64,
    /// Stop as soon as the verdict is decided instead of converging fully.
    pub early_exit: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_outer_iterations: 200,
            max_newton_steps: 100,
            eps_pos: 1e-9,
            eps_neg_rel: 1e-8,
            gap_tol_rel: 1e-11,
            barrier_growth: 20.0,
            restarts: 5,
            seed: 0,
            early_exit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeasibilityStatus {
    Feasible,
    Infeasible,
    Indeterminate,
}

impl FeasibilityStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeasibilityStatus::Feasible => "feasible",
            FeasibilityStatus::Infeasible => "infeasible",
            FeasibilityStatus::Indeterminate => "indeterminate",
        }
    }
}

impl std::fmt::Display for FeasibilityStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One centered point of the barrier path.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub stage: usize,
    pub barrier_weight: f64,
    pub newton_steps: usize,
    /// `lambda_max(Sigma(v))` at the centered point.
    pub objective: f64,
    /// Epigraph variable, an upper bound on `objective`.
    pub upper: f64,
    /// Dual bound on the optimum.
    pub lower: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    DecidedFeasible,
    DecidedInfeasible,
    Stalled,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityVerdict {
    pub status: FeasibilityStatus,
    /// Certified point, present iff `status` is feasible.
    pub witness: Option<DecisionVars>,
    /// Point with the smallest certified `lambda_max` found by any run.
    pub best_point: Vec<f64>,
    /// `lambda_max(Sigma(best_point))` from an independent eigen-decomposition.
    pub margin: f64,
    /// Strictness threshold used for the verdict.
    pub threshold: f64,
    /// Best dual bound on `min f` over the floored simplex.
    pub lower_bound: f64,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    pub restarts_used: usize,
    /// Normalization of the search set: `sum v = 1`, `v_i >= floor`.
    pub floor: f64,
}

/// `lambda_max(Sigma(v))`, computed from scratch.
pub fn certify(problem: &LmiProblem, v: &[f64]) -> Result<f64, SolverError> {
    if v.len() != problem.num_vars() || v.iter().any(|x| !(*x > 0.0)) {
        return Err(SolverError::InvalidPoint {
            expected: problem.num_vars(),
        });
    }
    Ok(sym_eig(&problem.evaluate(v))?.max())
}

struct RunOutcome {
    best_point: Vec<f64>,
    best_objective: f64,
    best_norm: f64,
    lower_bound: f64,
    trace: Vec<IterationRecord>,
    termination: Termination,
}

impl RunOutcome {
    /// Keeps the better point of two runs; the later run decides termination.
    fn merge(mut self, next: RunOutcome) -> RunOutcome {
        self.trace.extend(next.trace);
        self.lower_bound = self.lower_bound.max(next.lower_bound);
        if next.best_objective < self.best_objective {
            self.best_objective = next.best_objective;
            self.best_point = next.best_point;
            self.best_norm = next.best_norm;
        }
        self.termination = next.termination;
        self
    }
}

struct Barrier<'a> {
    problem: &'a LmiProblem,
    floor: f64,
    dim: usize,
}

struct Derivatives {
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Barrier<'a> {
    fn slack(&self, v: &[f64], upper: f64) -> DMatrix<f64> {
        let mut f = -self.problem.evaluate(v);
        for i in 0..self.dim {
            f[(i, i)] += upper;
        }
        f
    }

    /// `t b - log det(b I - Sigma(v)) - sum log(v_i - floor)`, or `None`
    /// outside the domain.
    fn value(&self, v: &[f64], upper: f64, weight: f64) -> Option<f64> {
        if v.iter().any(|x| *x <= self.floor) {
            return None;
        }
        let chol = self.slack(v, upper).cholesky()?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let logs: f64 = v.iter().map(|x| (x - self.floor).ln()).sum();
        let val = weight * upper - logdet - logs;
        val.is_finite().then_some(val)
    }

    fn derivatives(&self, v: &[f64], upper: f64, weight: f64) -> Option<Derivatives> {
        let m = v.len();
        let f = self.slack(v, upper);
        let finv = f.cholesky()?.inverse();
        let finv2 = &finv * &finv;
        let coeffs = self.problem.coefficients();

        let mut grad = DVector::zeros(m + 1);
        let mut hess = DMatrix::zeros(m + 1, m + 1);
        for (i, ci) in coeffs.iter().enumerate() {
            let slack = v[i] - self.floor;
            let mut g = 0.0;
            let mut hs = 0.0;
            for &(r, c, w) in &ci.entries {
                g += w * finv[(c, r)];
                hs += w * finv2[(c, r)];
            }
            grad[i] = g - 1.0 / slack;
            hess[(i, m)] = -hs;
            hess[(m, i)] = -hs;
            for (j, cj) in coeffs.iter().enumerate().skip(i) {
                let mut h = 0.0;
                for &(r1, c1, w1) in &ci.entries {
                    for &(r2, c2, w2) in &cj.entries {
                        h += w1 * w2 * finv[(c2, r1)] * finv[(c1, r2)];
                    }
                }
                hess[(i, j)] = h;
                hess[(j, i)] = h;
            }
            hess[(i, i)] += 1.0 / (slack * slack);
        }
        grad[m] = weight - finv.trace();
        hess[(m, m)] = finv.norm_squared();
        Some(Derivatives { grad, hess })
    }
}

/// Newton direction for the barrier with the constraint `sum dv = 0`.
fn newton_direction(d: &Derivatives, m: usize) -> Option<DVector<f64>> {
    let size = m + 1;
    let scale = DVector::from_fn(size, |i, _| {
        let h = d.hess[(i, i)];
        if h > 0.0 {
            1.0 / h.sqrt()
        } else {
            1.0
        }
    });
    let mut h = d.hess.clone();
    for i in 0..size {
        for j in 0..size {
            h[(i, j)] *= scale[i] * scale[j];
        }
    }
    let g = d.grad.component_mul(&scale);
    let a = DVector::from_fn(size, |i, _| if i < m { scale[i] } else { 0.0 });
    let chol = match h.clone().cholesky() {
        Some(c) => c,
        None => {
            for i in 0..size {
                h[(i, i)] += 1e-12;
            }
            h.cholesky()?
        }
    };
    let zg = chol.solve(&g);
    let za = chol.solve(&a);
    let denom = a.dot(&za);
    if !(denom > 0.0) {
        return None;
    }
    let w = -a.dot(&zg) / denom;
    let step = -(zg + za * w);
    Some(step.component_mul(&scale))
}

fn barrier_run(
    problem: &LmiProblem,
    start: Vec<f64>,
    opts: &SolveOptions,
) -> Result<RunOutcome, SolverError> {
    let m = problem.num_vars();
    let dim = problem.dim();
    let barrier = Barrier {
        problem,
        floor: opts.eps_pos,
        dim,
    };
    let degree = (dim + m) as f64;

    let mut v = start;
    let eig0 = sym_eig(&problem.evaluate(&v))?;
    let scale = if eig0.norm() > 0.0 { eig0.norm() } else { 1.0 };
    let mut upper = eig0.max() + scale;
    let mut weight = 1.0 / scale;

    let mut best_point = v.clone();
    let mut best_objective = eig0.max();
    let mut best_norm = eig0.norm();
    let mut lower_bound = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut termination = Termination::IterationCap;

    'stages: for stage in 0..opts.max_outer_iterations {
        let mut steps = 0;
        let mut centered = false;
        while steps < opts.max_newton_steps {
            let Some(d) = barrier.derivatives(&v, upper, weight) else {
                termination = Termination::Stalled;
                break 'stages;
            };
            let Some(dir) = newton_direction(&d, m) else {
                termination = Termination::Stalled;
                break 'stages;
            };
            let decrement = -d.grad.dot(&dir);
            if decrement / 2.0 <= 1e-10 {
                centered = true;
                break;
            }
            steps += 1;

            let mut alpha: f64 = 1.0;
            for i in 0..m {
                if dir[i] < 0.0 {
                    alpha = alpha.min(0.99 * (v[i] - opts.eps_pos) / -dir[i]);
                }
            }
            let current = barrier
                .value(&v, upper, weight)
                .expect("iterate stays in the barrier domain");
            let slope = d.grad.dot(&dir);
            let mut accepted = false;
            while alpha > 1e-16 {
                let trial: Vec<f64> = (0..m).map(|i| v[i] + alpha * dir[i]).collect();
                let trial_upper = upper + alpha * dir[m];
                if let Some(val) = barrier.value(&trial, trial_upper, weight) {
                    if val <= current + 0.25 * alpha * slope {
                        v = trial;
                        upper = trial_upper;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no progress possible at working precision
                centered = decrement / 2.0 <= 1e-6;
                break;
            }
        }
        if !centered && steps >= opts.max_newton_steps {
            termination = Termination::Stalled;
            break;
        }

        let eig = sym_eig(&problem.evaluate(&v))?;
        let objective = eig.max();
        let lower = upper - degree / weight;
        if centered {
            lower_bound = lower_bound.max(lower);
        }
        if objective < best_objective {
            best_objective = objective;
            best_point = v.clone();
            best_norm = eig.norm();
        }
        trace.push(IterationRecord {
            stage,
            barrier_weight: weight,
            newton_steps: steps,
            objective,
            upper,
            lower,
        });
        if !centered {
            termination = Termination::Stalled;
            break;
        }
        let threshold = opts.eps_neg_rel * best_norm;
        if opts.early_exit {
            if best_objective < -threshold {
                termination = Termination::DecidedFeasible;
                break;
            }
            if lower_bound > threshold {
                termination = Termination::DecidedInfeasible;
                break;
            }
        }
        if degree / weight < opts.gap_tol_rel * scale {
            termination = Termination::Converged;
            break;
        }
        weight *= opts.barrier_growth;
    }

    Ok(RunOutcome {
        best_point,
        best_objective,
        best_norm,
        lower_bound,
        trace,
        termination,
    })
}

fn random_start(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0) + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| 0.5 / m as f64 + 0.5 * x / total).collect()
}

/// Decides strict feasibility of `Sigma(v) < 0` over `v > 0`.
pub fn solve_feasibility(
    problem: &LmiProblem,
    opts: &SolveOptions,
) -> Result<FeasibilityVerdict, SolverError> {
    let m = problem.num_vars();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut outcome = barrier_run(problem, vec![1.0 / m as f64; m], opts)?;
    let mut restarts_used = 0;
    while outcome.termination == Termination::Stalled
        && restarts_used < opts.restarts
        && outcome.best_objective >= -opts.eps_neg_rel * outcome.best_norm
    {
        restarts_used += 1;
        let next = barrier_run(problem, random_start(&mut rng, m), opts)?;
        outcome = outcome.merge(next);
    }

    let margin = certify(problem, &outcome.best_point)?;
    let norm = sym_eig(&problem.evaluate(&outcome.best_point))?.norm();
    let threshold = opts.eps_neg_rel * norm;
    let status = if margin < -threshold {
        FeasibilityStatus::Feasible
    } else if margin > threshold {
        FeasibilityStatus::Infeasible
    } else {
        FeasibilityStatus::Indeterminate
    };
    let witness = (status == FeasibilityStatus::Feasible)
        .then(|| DecisionVars::from_flat(problem.n, &outcome.best_point));
    Ok(FeasibilityVerdict {
        status,
        witness,
        best_point: outcome.best_point,
        margin,
        threshold,
        lower_bound: outcome.lower_bound,
        trace: outcome.trace,
        termination: outcome.termination,
        restarts_used,
        floor: opts.eps_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{build_problem, Sigma4Mode};
    use crate::model::{derive, equilibrium_from_target, ModelSpec};

    fn scalar_problem(a: f64) -> LmiProblem {
        let z = DMatrix::zeros(1, 1);
        let base = ModelSpec::new(
            DMatrix::from_element(1, 1, a),
            z.clone(),
            z.clone(),
            DVector::from_element(1, 1.0),
            z.clone(),
            DMatrix::from_element(1, 1, 1.0),
            z.clone(),
            z,
        )
        .unwrap();
        // a < 0 has no positive equilibrium; keep u* = 1 via a shifted model
        // and overwrite the interaction entry in the coefficient placement.
        let shifted = if a > 0.0 {
            base.clone()
        } else {
            let mut s = base.clone();
            s.a[(0, 0)] = 1.0;
            s
        };
        let m = equilibrium_from_target(&shifted, &DVector::from_element(1, 1.0)).unwrap();
        let mut d = derive(&m).unwrap();
        d.a_tilde[(0, 0)] = a;
        build_problem(&base, &d, Sigma4Mode::default())
    }

    #[test]
    fn scalar_sign_cases() {
        let opts = SolveOptions::default();
        let feasible = solve_feasibility(&scalar_problem(1.0), &opts).unwrap();
        assert_eq!(feasible.status, FeasibilityStatus::Feasible);
        assert!(feasible.margin < 0.0);
        let witness = feasible.witness.as_ref().unwrap();
        assert!(witness.is_positive());
        let infeasible = solve_feasibility(&scalar_problem(-1.0), &opts).unwrap();
        assert_eq!(infeasible.status, FeasibilityStatus::Infeasible);
        assert!(infeasible.margin > 0.0);
        assert!(infeasible.witness.is_none());
    }

    #[test]
    fn certify_scales_linearly() {
        let p = scalar_problem(1.0);
        let v = vec![0.3, 0.2, 0.4, 0.1];
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let a = certify(&p, &v).unwrap();
        let b = certify(&p, &v2).unwrap();
        assert!((b - 2.0 * a).abs() <= 1e-14 * a.abs().max(1.0));
        assert!(certify(&p, &[1.0, 0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn objective_trace_nonincreasing() {
        let p = scalar_problem(1.0);
        let verdict = solve_feasibility(&p, &SolveOptions::default()).unwrap();
        assert!(verdict.trace.len() > 3);
        for w in verdict.trace.windows(2) {
            assert!(w[1].upper <= w[0].upper + 1e-9 * w[0].upper.abs().max(1.0));
        }
    }

    #[test]
    fn deterministic() {
        let p = scalar_problem(1.0);
        let opts = SolveOptions::default();
        assert_eq!(solve_feasibility(&p, &opts).unwrap(), solve_feasibility(&p, &opts).unwrap());
    }

    #[test]
    fn scaling_invariance() {
        let p = scalar_problem(1.0);
        let opts = SolveOptions::default();
        let a = solve_feasibility(&p, &opts).unwrap();
        let b = solve_feasibility(&p.scaled(7.0), &opts).unwrap();
        assert_eq!(a.status, b.status);
        assert!((b.margin - 7.0 * a.margin).abs() <= 1e-6 * a.margin.abs());
    }

    #[test]
    fn early_exit_agrees() {
        let opts = SolveOptions {
            early_exit: true,
            ..SolveOptions::default()
        };
        for (a, expected) in [(1.0, FeasibilityStatus::Feasible), (-1.0, FeasibilityStatus::Infeasible)] {
            let v = solve_feasibility(&scalar_problem(a), &opts).unwrap();
            assert_eq!(v.status, expected);
        }
    }
}
