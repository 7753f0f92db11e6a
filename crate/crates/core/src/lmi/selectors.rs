use nalgebra::{DMatrix, DVector};

use crate::model::{pair_index, DerivedModel, ModelSpec};

/// Offsets of the four channels of the extended variable
/// `xi = (x, x_d_tilde, x_dist_tilde, z_dist)` of length `n + 3 n^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtendedLayout {
    pub n: usize,
}

impl ExtendedLayout {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn n2(&self) -> usize {
        self.n * self.n
    }

    pub fn dim(&self) -> usize {
        self.n + 3 * self.n2()
    }

    pub fn x(&self, i: usize) -> usize {
        i
    }

    pub fn x_delay(&self, k: usize) -> usize {
        self.n + k
    }

    pub fn x_dist(&self, k: usize) -> usize {
        self.n + self.n2() + k
    }

    pub fn z_dist(&self, k: usize) -> usize {
        self.n + 2 * self.n2() + k
    }
}

/// Block-entry matrices and the stacked interaction matrix.
#[derive(Debug, Clone)]
pub struct SelectorSet {
    pub layout: ExtendedLayout,
    /// `n x N`, picks `x`.
    pub e1: DMatrix<f64>,
    /// `n^2 x N`, picks the discrete-delay deviation channel.
    pub e2: DMatrix<f64>,
    /// `n^2 x N`, picks the distributed-delay deviation channel.
    pub e3: DMatrix<f64>,
    /// `n^2 x N`, picks the double-integral channel.
    pub e4: DMatrix<f64>,
    /// `n^2 x N`, `[I_stack, 0, 0, 0]`.
    pub e5: DMatrix<f64>,
    /// `n^2 x n` replication matrix (n stacked identities).
    pub i_stack: DMatrix<f64>,
    /// `n x n^2`, row i holds row i of `A_d` in columns `i n .. i n + n`.
    pub a_d_rows: DMatrix<f64>,
    /// Same layout for the distributed-delay coefficients.
    pub a_dist_rows: DMatrix<f64>,
    /// `n x N`, `[A_tilde, a_d_rows, a_dist_rows, 0]`.
    pub cal_a: DMatrix<f64>,
}

impl SelectorSet {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }
}

/// Row-block-diagonal spread of an `n x n` matrix into `n x n^2`.
pub fn spread_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n * n);
    for i in 0..n {
        for j in 0..n {
            out[(i, pair_index(n, i, j))] = m[(i, j)];
        }
    }
    out
}

fn block_selector(rows: usize, dim: usize, offset: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(rows, dim);
    for r in 0..rows {
        e[(r, offset + r)] = 1.0;
    }
    e
}

pub fn replication_matrix(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n * n, n);
    for i in 0..n {
        for j in 0..n {
            m[(pair_index(n, i, j), j)] = 1.0;
        }
    }
    m
}

pub fn build_selectors(derived: &DerivedModel, model: &ModelSpec) -> SelectorSet {
    let n = model.n();
    let layout = ExtendedLayout::new(n);
    let dim = layout.dim();
    let n2 = layout.n2();
    let i_stack = replication_matrix(n);
    let mut e5 = DMatrix::zeros(n2, dim);
    e5.view_mut((0, 0), (n2, n)).copy_from(&i_stack);
    let a_d_rows = spread_rows(&model.a_d);
    let a_dist_rows = spread_rows(&model.a_dist);
    let mut cal_a = DMatrix::zeros(n, dim);
    cal_a.view_mut((0, 0), (n, n)).copy_from(&derived.a_tilde);
    cal_a.view_mut((0, n), (n, n2)).copy_from(&a_d_rows);
    cal_a.view_mut((0, n + n2), (n, n2)).copy_from(&a_dist_rows);
    SelectorSet {
        layout,
        e1: block_selector(n, dim, 0),
        e2: block_selector(n2, dim, layout.x_delay(0)),
        e3: block_selector(n2, dim, layout.x_dist(0)),
        e4: block_selector(n2, dim, layout.z_dist(0)),
        e5,
        i_stack,
        a_d_rows,
        a_dist_rows,
        cal_a,
    }
}

/// Diagonal lifts, stored by their diagonals (index `pair_index(n, i, j)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalLifts {
    /// Delay bounds.
    pub t: DVector<f64>,
    /// `1 - tau_bar_d`.
    pub t_d: DVector<f64>,
    /// Kernel decay rates.
    pub alpha: DVector<f64>,
    /// Kernel masses.
    pub beta: DVector<f64>,
    /// Equilibrium, length n.
    pub u_star: DVector<f64>,
}

fn lift(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(n * n);
    for i in 0..n {
        for j in 0..n {
            out[pair_index(n, i, j)] = f(m[(i, j)]);
        }
    }
    out
}

pub fn build_lifts(derived: &DerivedModel, model: &ModelSpec) -> DiagonalLifts {
    DiagonalLifts {
        t: lift(&model.tau_bar, |x| x),
        t_d: lift(&model.tau_bar_d, |x| 1.0 - x),
        alpha: lift(&model.alpha, |x| x),
        beta: lift(&derived.beta, |x| x),
        u_star: derived.u_star.clone(),
    }
}
