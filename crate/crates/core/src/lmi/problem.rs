use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::selectors::ExtendedLayout;
use crate::model::{pair_index, DerivedModel, ModelSpec};

/// Which channel the subtracted quadratic term of the double-integral block
/// acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Sigma4Mode {
    /// Distributed-delay channel, consistent with the functional's derivative.
    #[default]
    DerivationConsistent,
    /// Discrete-delay channel, as the block formula is printed.
    PaperLiteral,
}

impl Sigma4Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Sigma4Mode::DerivationConsistent => "derivation",
            Sigma4Mode::PaperLiteral => "paper",
        }
    }
}

impl std::fmt::Display for Sigma4Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagonals of the decision matrices `P`, `Q`, `R`, `S`.
///
/// The flat layout used by [`LmiProblem`] is `[p (n), q (n^2), r (n^2), s (n^2)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionVars {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub s: DVector<f64>,
}

impl DecisionVars {
    pub fn num_vars(n: usize) -> usize {
        n + 3 * n * n
    }

    pub fn from_flat(n: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::num_vars(n), "decision vector length");
        let n2 = n * n;
        DecisionVars {
            p: DVector::from_column_slice(&v[..n]),
            q: DVector::from_column_slice(&v[n..n + n2]),
            r: DVector::from_column_slice(&v[n + n2..n + 2 * n2]),
            s: DVector::from_column_slice(&v[n + 2 * n2..]),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.p
            .iter()
            .chain(self.q.iter())
            .chain(self.r.iter())
            .chain(self.s.iter())
            .copied()
            .collect()
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn is_positive(&self) -> bool {
        self.to_flat().iter().all(|x| *x > 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        DecisionVars {
            p: &self.p * c,
            q: &self.q * c,
            r: &self.r * c,
            s: &self.s * c,
        }
    }
}

/// Human-readable name of flat decision variable `idx`, one-based like `q_12`.
pub fn var_label(n: usize, idx: usize) -> String {
    let n2 = n * n;
    if idx < n {
        return format!("p_{}", idx + 1);
    }
    let (name, k) = match (idx - n) / n2 {
        0 => ("q", idx - n),
        1 => ("r", idx - n - n2),
        _ => ("s", idx - n - 2 * n2),
    };
    format!("{name}_{}{}", k / n + 1, k % n + 1)
}

/// Symmetric sparse matrix with both triangles stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymSparse {
    /// `(row, col, value)`, sorted by `(row, col)`, no duplicates.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SymSparse {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn add_to(&self, target: &mut DMatrix<f64>, weight: f64) {
        for &(r, c, v) in &self.entries {
            target[(r, c)] += weight * v;
        }
    }

    pub fn to_dense(&self, dim: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dim, dim);
        self.add_to(&mut m, 1.0);
        m
    }
}

/// Accumulates a symmetric sparse matrix from quadratic and bilinear forms.
#[derive(Default)]
struct SymBuilder {
    acc: BTreeMap<(usize, usize), f64>,
}

impl SymBuilder {
    fn add(&mut self, r: usize, c: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        *self.acc.entry((r, c)).or_insert(0.0) += v;
        if r != c {
            *self.acc.entry((c, r)).or_insert(0.0) += v;
        }
    }

    /// `w * L' L` for the linear form `L = sum coef * xi[idx]`.
    fn quad(&mut self, form: &[(usize, f64)], w: f64) {
        for (a, &(ia, ca)) in form.iter().enumerate() {
            self.add(ia, ia, w * ca * ca);
            for &(ib, cb) in &form[a + 1..] {
                self.add(ia, ib, w * ca * cb);
            }
        }
    }

    /// `w * (L1' L2 + L2' L1)`.
    fn cross(&mut self, f1: &[(usize, f64)], f2: &[(usize, f64)], w: f64) {
        for &(ia, ca) in f1 {
            for &(ib, cb) in f2 {
                if ia == ib {
                    self.add(ia, ia, 2.0 * w * ca * cb);
                } else {
                    self.add(ia, ib, w * ca * cb);
                }
            }
        }
    }

    fn finish(self) -> SymSparse {
        SymSparse {
            entries: self
                .acc
                .into_iter()
                .filter(|(_, v)| *v != 0.0)
                .map(|((r, c), v)| (r, c, v))
                .collect(),
        }
    }
}

/// Affine (here linear) map from positive decision scalars to the symmetric
/// stability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub n: usize,
    pub mode: Sigma4Mode,
    coefficients: Vec<SymSparse>,
}

impl LmiProblem {
    pub fn from_coefficients(n: usize, mode: Sigma4Mode, coefficients: Vec<SymSparse>) -> Self {
        assert_eq!(coefficients.len(), DecisionVars::num_vars(n));
        LmiProblem {
            n,
            mode,
            coefficients,
        }
    }

    pub fn dim(&self) -> usize {
        ExtendedLayout::new(self.n).dim()
    }

    pub fn num_vars(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficient(&self, idx: usize) -> &SymSparse {
        &self.coefficients[idx]
    }

    pub fn coefficients(&self) -> &[SymSparse] {
        &self.coefficients
    }

    /// `Sigma(v)` for a flat decision vector.
    pub fn evaluate(&self, v: &[f64]) -> DMatrix<f64> {
        assert_eq!(v.len(), self.num_vars());
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for (c, &w) in self.coefficients.iter().zip(v) {
            c.add_to(&mut m, w);
        }
        m
    }

    pub fn evaluate_vars(&self, vars: &DecisionVars) -> DMatrix<f64> {
        self.evaluate(&vars.to_flat())
    }

    /// Same problem with every coefficient matrix multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .map(|m| SymSparse {
                entries: m.entries.iter().map(|&(r, k, v)| (r, k, c * v)).collect(),
            })
            .collect();
        LmiProblem {
            n: self.n,
            mode: self.mode,
            coefficients,
        }
    }
}

/// Builds one coefficient matrix per decision scalar by placing each term of
/// the four blocks at its channel indices.
pub fn build_problem(model: &ModelSpec, derived: &DerivedModel, mode: Sigma4Mode) -> LmiProblem {
    let n = model.n();
    let lay = ExtendedLayout::new(n);
    let mut coefficients = Vec::with_capacity(DecisionVars::num_vars(n));

    // p_i: -x_i (A_tilde x + A_d row i . xd_tilde + A_D row i . xD_tilde)
    //      + 1/2 u*_i (sigma row i . x)^2
    for i in 0..n {
        let mut b = SymBuilder::default();
        for j in 0..n {
            b.add(lay.x(i), lay.x(j), -0.5 * derived.a_tilde[(i, j)]);
            let k = pair_index(n, i, j);
            b.add(lay.x(i), lay.x_delay(k), -0.5 * model.a_d[(i, j)]);
            b.add(lay.x(i), lay.x_dist(k), -0.5 * model.a_dist[(i, j)]);
        }
        // add() mirrors off-diagonal entries; the diagonal needs the factor 2
        // that the symmetric sum produces.
        b.add(lay.x(i), lay.x(i), -0.5 * derived.a_tilde[(i, i)]);
        let form: Vec<(usize, f64)> = (0..n).map(|j| (lay.x(j), model.sigma[(i, j)])).collect();
        b.quad(&form, 0.5 * derived.u_star[i]);
        coefficients.push(b.finish());
    }

    let pairs = || (0..n).flat_map(move |i| (0..n).map(move |j| (i, j)));

    // q_ij: x_j^2 - (1 - taud_ij)(xd_k + x_j)^2
    for (i, j) in pairs() {
        let k = pair_index(n, i, j);
        let mut b = SymBuilder::default();
        b.add(lay.x(j), lay.x(j), 1.0);
        b.quad(
            &[(lay.x_delay(k), 1.0), (lay.x(j), 1.0)],
            -(1.0 - model.tau_bar_d[(i, j)]),
        );
        coefficients.push(b.finish());
    }

    // r_ij: tau x_j^2 - (1/tau)(4 w^2 - 12 w z + 12 z^2) - 4 alpha z^2,
    // w = xD_k + beta x_j
    for (i, j) in pairs() {
        let k = pair_index(n, i, j);
        let tau = model.tau_bar[(i, j)];
        let alpha = model.alpha[(i, j)];
        let w = [(lay.x_dist(k), 1.0), (lay.x(j), derived.beta[(i, j)])];
        let z = [(lay.z_dist(k), 1.0)];
        let mut b = SymBuilder::default();
        b.add(lay.x(j), lay.x(j), tau);
        b.quad(&w, -4.0 / tau);
        b.cross(&w, &z, 6.0 / tau);
        b.quad(&z, -12.0 / tau - 4.0 * alpha);
        coefficients.push(b.finish());
    }

    // s_ij: 2 x_j z - (1/tau) w^2 - 2 alpha z^2
    for (i, j) in pairs() {
        let k = pair_index(n, i, j);
        let tau = model.tau_bar[(i, j)];
        let alpha = model.alpha[(i, j)];
        let channel = match mode {
            Sigma4Mode::DerivationConsistent => lay.x_dist(k),
            Sigma4Mode::PaperLiteral => lay.x_delay(k),
        };
        let w = [(channel, 1.0), (lay.x(j), derived.beta[(i, j)])];
        let z = [(lay.z_dist(k), 1.0)];
        let mut b = SymBuilder::default();
        b.cross(&[(lay.x(j), 1.0)], &z, 1.0);
        b.quad(&w, -1.0 / tau);
        b.quad(&z, -2.0 * alpha);
        coefficients.push(b.finish());
    }

    LmiProblem {
        n,
        mode,
        coefficients,
    }
}
