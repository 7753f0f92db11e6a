//! Lyapunov-Krasovskii functional evaluated along a sampled path.

use super::history::HistoryBuffer;
use super::step::StepContext;
use super::SimError;
use crate::lmi::DecisionVars;
use crate::model::pair_index;

/// The four parts of the functional at one time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LkfValue {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
}

impl LkfValue {
    pub fn total(&self) -> f64 {
        self.v1 + self.v2 + self.v3 + self.v4
    }
}

fn trapezoid(samples: &[(f64, f64)]) -> f64 {
    samples
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// `y - ln(1 + y) >= 0` without cancellation near `y = 0`.
fn log_gap(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        y * y * (0.5 - y / 3.0 + y * y / 4.0 - y.powi(3) / 5.0 + y.powi(4) / 6.0)
    } else {
        y - y.ln_1p()
    }
}

/// Functional at the newest node of `history`, with `x = u - u*`.
///
/// The single integrals use the trapezoid rule on the history grid. The
/// double integral caches the inner integral from the newest node backwards,
/// then integrates its square.
pub fn evaluate_lkf(history: &HistoryBuffer, ctx: &StepContext, vars: &DecisionVars) -> Result<LkfValue, SimError> {
    let n = ctx.n();
    if vars.n() != n {
        return Err(SimError::Domain(format!(
            "decision variables are sized for n = {}, model has n = {n}",
            vars.n()
        )));
    }
    if !vars.is_positive() {
        return Err(SimError::Domain("decision variables must be strictly positive".into()));
    }
    let m = &ctx.model;
    let t = history.time();
    let u = history.latest();
    let mut out = LkfValue::default();
    for i in 0..n {
        let us = ctx.u_star[i];
        if !(u[i] > 0.0) {
            return Err(SimError::Domain(format!("x_{} + u*_{} = {} is not positive", i + 1, i + 1, u[i])));
        }
        out.v1 += vars.p[i] * us * log_gap((u[i] - us) / us);
    }
    for i in 0..n {
        for j in 0..n {
            let k = pair_index(n, i, j);
            let us = ctx.u_star[j];
            let tau = ctx.delays.tau(i, j, t);
            let sq: Vec<(f64, f64)> = history
                .window(j, tau)
                .into_iter()
                .map(|(lag, u)| (lag, (u - us).powi(2)))
                .collect();
            out.v2 += vars.q[k] * trapezoid(&sq);

            let bar = m.tau_bar[(i, j)];
            let alpha = m.alpha[(i, j)];
            let window = history.window(j, bar);
            let weighted: Vec<(f64, f64)> = window
                .iter()
                .map(|&(lag, u)| (lag, (bar - lag) * (-2.0 * alpha * lag).exp() * (u - us).powi(2)))
                .collect();
            out.v3 += vars.r[k] * trapezoid(&weighted);

            let mut inner = 0.0;
            let mut squares = Vec::with_capacity(window.len());
            squares.push((0.0, 0.0));
            for w in window.windows(2) {
                let (l0, u0) = w[0];
                let (l1, u1) = w[1];
                let f0 = (-alpha * l0).exp() * (u0 - us);
                let f1 = (-alpha * l1).exp() * (u1 - us);
                inner += 0.5 * (l1 - l0) * (f0 + f1);
                squares.push((l1, inner * inner));
            }
            out.v4 += vars.s[k] / bar * trapezoid(&squares);
        }
    }
    Ok(out)
}
