//! Dense assembly of the four stability blocks from selector products.
//!
//! This path follows the block formulas literally and is kept separate from
//! the index-placement path in [`super::problem`], so each can check the other.

use nalgebra::{DMatrix, DVector};

use super::problem::{DecisionVars, Sigma4Mode};
use super::selectors::{DiagonalLifts, SelectorSet};

fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `-1/2 (e1' P A + A' P e1) + 1/2 e1' sigma' P U* sigma e1`.
pub fn assemble_sigma1(
    p: &DVector<f64>,
    sel: &SelectorSet,
    u_star: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> DMatrix<f64> {
    let pm = diag(p);
    let cross = sel.e1.transpose() * &pm * &sel.cal_a;
    let noise = sel.e1.transpose() * sigma.transpose() * &pm * diag(u_star) * sigma * &sel.e1;
    symmetrize(-(&cross + cross.transpose()) * 0.5 + noise * 0.5)
}

/// `e1' Q1 e1 - (e2 + e5)' Td Q (e2 + e5)` with `Q1 = I' Q I`.
pub fn assemble_sigma2(q: &DVector<f64>, sel: &SelectorSet, lifts: &DiagonalLifts) -> DMatrix<f64> {
    let qm = diag(q);
    let q1 = sel.i_stack.transpose() * &qm * &sel.i_stack;
    let qd = diag(&lifts.t_d) * &qm;
    let w = &sel.e2 + &sel.e5;
    symmetrize(sel.e1.transpose() * q1 * &sel.e1 - w.transpose() * qd * w)
}

/// Integral-inequality block of the weighted double-integral term.
pub fn assemble_sigma3(r: &DVector<f64>, sel: &SelectorSet, lifts: &DiagonalLifts) -> DMatrix<f64> {
    let n2 = sel.layout.n2();
    let rm = diag(r);
    let r1 = sel.i_stack.transpose() * diag(&lifts.t) * &rm * &sel.i_stack;
    let t_inv = lifts.t.map(|x| 1.0 / x);
    let r2 = diag(&t_inv) * &rm;
    let ar = diag(&lifts.alpha) * &rm;

    let mut kernel = DMatrix::zeros(2 * n2, 2 * n2);
    kernel.view_mut((0, 0), (n2, n2)).copy_from(&(&r2 * 4.0));
    kernel.view_mut((0, n2), (n2, n2)).copy_from(&(&r2 * -6.0));
    kernel.view_mut((n2, 0), (n2, n2)).copy_from(&(&r2 * -6.0));
    kernel
        .view_mut((n2, n2), (n2, n2))
        .copy_from(&(&r2 * 12.0 + &ar * 4.0));

    let top = &sel.e3 + diag(&lifts.beta) * &sel.e5;
    let mut stacked = DMatrix::zeros(2 * n2, sel.dim());
    stacked.view_mut((0, 0), (n2, sel.dim())).copy_from(&top);
    stacked.view_mut((n2, 0), (n2, sel.dim())).copy_from(&sel.e4);

    symmetrize(sel.e1.transpose() * r1 * &sel.e1 - stacked.transpose() * kernel * stacked)
}

/// Double-integral functional block. `PaperLiteral` uses the discrete-delay
/// channel in the subtracted quadratic term.
pub fn assemble_sigma4(
    s: &DVector<f64>,
    sel: &SelectorSet,
    lifts: &DiagonalLifts,
    mode: Sigma4Mode,
) -> DMatrix<f64> {
    let sm = diag(s);
    let s1 = sel.i_stack.transpose() * &sm;
    let t_inv = lifts.t.map(|x| 1.0 / x);
    let s2 = diag(&t_inv) * &sm;
    let channel = match mode {
        Sigma4Mode::DerivationConsistent => &sel.e3,
        Sigma4Mode::PaperLiteral => &sel.e2,
    };
    let w = channel + diag(&lifts.beta) * &sel.e5;
    let coupling = sel.e1.transpose() * &s1 * &sel.e4;
    let decay = sel.e4.transpose() * diag(&lifts.alpha) * &sm * &sel.e4 * 2.0;
    symmetrize(&coupling + coupling.transpose() - w.transpose() * s2 * w - decay)
}

/// `Sigma_1 + Sigma_2 + Sigma_3 + Sigma_4` evaluated densely.
pub fn assemble_sigma(
    vars: &DecisionVars,
    sel: &SelectorSet,
    lifts: &DiagonalLifts,
    sigma: &DMatrix<f64>,
    mode: Sigma4Mode,
) -> DMatrix<f64> {
    assemble_sigma1(&vars.p, sel, &lifts.u_star, sigma)
        + assemble_sigma2(&vars.q, sel, lifts)
        + assemble_sigma3(&vars.r, sel, lifts)
        + assemble_sigma4(&vars.s, sel, lifts, mode)
}
