//! Ring buffer of past states on a uniform grid, delayed lookups and the
//! distributed-delay kernel.

use std::fmt;
use std::sync::Arc;

/// Initial segment `phi_0` on `[-tau_max, 0]`.
#[derive(Clone)]
pub enum InitialHistory {
    Constant(Vec<f64>),
    /// Sampled at every grid node `t <= 0`.
    Function(Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>),
}

impl fmt::Debug for InitialHistory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialHistory::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            InitialHistory::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl InitialHistory {
    pub fn sample(&self, t: f64) -> Vec<f64> {
        match self {
            InitialHistory::Constant(v) => v.clone(),
            InitialHistory::Function(f) => f(t),
        }
    }
}

/// Snap `x` to the nearest integer when it is within rounding of it.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Last `capacity` grid nodes of an n-dimensional path.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    n: usize,
    dt: f64,
    capacity: usize,
    data: Vec<f64>,
    head: usize,
    step: u64,
}

impl HistoryBuffer {
    /// Nodes needed to look back `tau_max` with one spare node for the
    /// partial interval at the far end.
    pub fn capacity_for(tau_max: f64, dt: f64) -> usize {
        (snap(tau_max / dt)).ceil() as usize + 2
    }

    /// Buffer whose newest node sits at `t = 0`, filled from `initial`.
    pub fn new(n: usize, dt: f64, tau_max: f64, initial: &InitialHistory) -> Self {
        let capacity = Self::capacity_for(tau_max, dt);
        let mut data = vec![0.0; capacity * n];
        // slot s holds the node at t = -(capacity - 1 - s) dt
        for s in 0..capacity {
            let t = -((capacity - 1 - s) as f64) * dt;
            let u = initial.sample(t);
            assert_eq!(u.len(), n, "initial history has wrong dimension");
            data[s * n..(s + 1) * n].copy_from_slice(&u);
        }
        HistoryBuffer {
            n,
            dt,
            capacity,
            data,
            head: capacity - 1,
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Time of the newest node.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Longest lag that can be looked up.
    pub fn coverage(&self) -> f64 {
        (self.capacity - 1) as f64 * self.dt
    }

    #[inline]
    fn slot(&self, back: usize) -> usize {
        debug_assert!(back < self.capacity);
        (self.head + self.capacity - back) % self.capacity
    }

    /// Component `j` of the node `back` steps before the newest one.
    #[inline]
    pub fn node(&self, back: usize, j: usize) -> f64 {
        self.data[self.slot(back) * self.n + j]
    }

    pub fn latest(&self) -> &[f64] {
        let s = self.head * self.n;
        &self.data[s..s + self.n]
    }

    pub fn push(&mut self, state: &[f64]) {
        debug_assert_eq!(state.len(), self.n);
        self.head = (self.head + 1) % self.capacity;
        let s = self.head * self.n;
        self.data[s..s + self.n].copy_from_slice(state);
        self.step += 1;
    }

    /// Linear interpolation of component `j` at `time() - lag`.
    #[inline]
    pub fn at_lag(&self, j: usize, lag: f64) -> f64 {
        let back = snap(lag / self.dt).max(0.0);
        let m = back.floor();
        let frac = back - m;
        let m = m as usize;
        assert!(
            m < self.capacity && (frac == 0.0 || m + 1 < self.capacity),
            "lag {lag} exceeds history coverage {}",
            self.coverage()
        );
        let lo = self.node(m, j);
        if frac == 0.0 {
            lo
        } else {
            lo + frac * (self.node(m + 1, j) - lo)
        }
    }

    /// Linear interpolation of component `j` at absolute time `t`.
    pub fn at(&self, j: usize, t: f64) -> f64 {
        self.at_lag(j, self.time() - t)
    }

    /// Grid nodes of component `j` over `[time() - len, time()]` as
    /// `(lag, value)` pairs, ending with an interpolated sample at lag `len`
    /// when the window does not end on a node.
    pub fn window(&self, j: usize, len: f64) -> Vec<(f64, f64)> {
        let (l, delta) = split_window(len, self.dt);
        let mut out: Vec<(f64, f64)> = (0..=l).map(|m| (m as f64 * self.dt, self.node(m, j))).collect();
        if delta > 0.0 {
            out.push((len, self.at_lag(j, len)));
        }
        out
    }
}

/// Number of whole steps in a window and the leftover length.
fn split_window(len: f64, dt: f64) -> (usize, f64) {
    let l = snap(len / dt).floor().max(0.0) as usize;
    let delta = len - l as f64 * dt;
    if delta <= 1e-12 * dt {
        (l, 0.0)
    } else {
        (l, delta)
    }
}

/// `int_0^h e^{-alpha s} ds`.
fn moment0(alpha: f64, h: f64) -> f64 {
    let y = alpha * h;
    if y.abs() < 1e-2 {
        h * (1.0 - y / 2.0 + y * y / 6.0 - y.powi(3) / 24.0 + y.powi(4) / 120.0 - y.powi(5) / 720.0)
    } else {
        -(-y).exp_m1() / alpha
    }
}

/// `int_0^h e^{-alpha s} s ds`.
fn moment1(alpha: f64, h: f64) -> f64 {
    let y = alpha * h;
    if y.abs() < 1e-2 {
        h * h
            * (0.5 - y / 3.0 + y * y / 8.0 - y.powi(3) / 30.0 + y.powi(4) / 144.0
                - y.powi(5) / 840.0)
    } else {
        (1.0 - (1.0 + y) * (-y).exp()) / (alpha * alpha)
    }
}

/// Quadrature weights for `int_{t - tau_bar}^{t} e^{alpha (eta - t)} u(eta) d eta`
/// on the history grid. The kernel is integrated exactly against the
/// piecewise-linear interpolant of `u`, so constant and linear histories are
/// reproduced to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStencil {
    pub alpha: f64,
    pub tau_bar: f64,
    /// Whole steps in the window.
    pub steps: usize,
    /// Weight of node `m` steps back, `m = 0..=steps + 1`.
    pub weights: Vec<f64>,
    /// `e^{-alpha dt} w_0 + w_1`-style factor shared by interior nodes.
    interior: f64,
    decay: f64,
    tail_decay: f64,
}

impl KernelStencil {
    pub fn new(alpha: f64, tau_bar: f64, dt: f64) -> Self {
        let (l, delta) = split_window(tau_bar, dt);
        let e1 = moment1(alpha, dt) / dt;
        let i0 = moment0(alpha, dt) - e1;
        let i1 = e1;
        let (j0, j1) = if delta > 0.0 {
            let f1 = moment1(alpha, delta) / dt;
            (moment0(alpha, delta) - f1, f1)
        } else {
            (0.0, 0.0)
        };
        let mut weights = vec![0.0; l + 2];
        for m in 0..l {
            let d = (-alpha * m as f64 * dt).exp();
            weights[m] += d * i0;
            weights[m + 1] += d * i1;
        }
        let d = (-alpha * l as f64 * dt).exp();
        weights[l] += d * j0;
        weights[l + 1] += d * j1;
        let decay = (-alpha * dt).exp();
        KernelStencil {
            alpha,
            tau_bar,
            steps: l,
            weights,
            interior: decay * i0 + i1,
            decay,
            tail_decay: (-alpha * l.saturating_sub(2) as f64 * dt).exp(),
        }
    }

    /// Sum of the weights; equals the kernel mass up to rounding.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Direct evaluation at the newest node of `history`.
    pub fn apply(&self, history: &HistoryBuffer, j: usize) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(m, w)| w * history.node(m, j))
            .sum()
    }
}

/// Distributed-delay integral of component `j` at the newest node.
pub fn distributed_kernel(history: &HistoryBuffer, j: usize, alpha: f64, tau_bar: f64) -> f64 {
    KernelStencil::new(alpha, tau_bar, history.dt()).apply(history, j)
}

/// Resynchronise the running sum this often to bound rounding drift.
const RESYNC_STEPS: usize = 256;

/// O(1)-per-step evaluation of a [`KernelStencil`] along a path.
///
/// Interior weights are geometric in the lag, so their sum is updated
/// recursively as nodes enter and leave the window.
#[derive(Debug, Clone)]
pub struct KernelAccumulator {
    pub j: usize,
    stencil: KernelStencil,
    running: f64,
    since_sync: usize,
}

impl KernelAccumulator {
    pub fn new(stencil: KernelStencil, j: usize, history: &HistoryBuffer) -> Self {
        let mut acc = KernelAccumulator {
            j,
            stencil,
            running: 0.0,
            since_sync: 0,
        };
        acc.sync(history);
        acc
    }

    fn recursive(&self) -> bool {
        self.stencil.steps >= 2
    }

    fn sync(&mut self, history: &HistoryBuffer) {
        self.since_sync = 0;
        if !self.recursive() {
            return;
        }
        let l = self.stencil.steps;
        let mut decay = 1.0;
        let mut sum = 0.0;
        for m in 1..l {
            sum += decay * history.node(m, self.j);
            decay *= self.stencil.decay;
        }
        self.running = sum;
    }

    /// Call once after every push onto `history`.
    pub fn advance(&mut self, history: &HistoryBuffer) {
        if !self.recursive() {
            return;
        }
        self.since_sync += 1;
        if self.since_sync >= RESYNC_STEPS {
            self.sync(history);
            return;
        }
        let l = self.stencil.steps;
        let leaving = self.stencil.tail_decay * history.node(l, self.j);
        self.running = history.node(1, self.j) + self.stencil.decay * (self.running - leaving);
    }

    pub fn value(&self, history: &HistoryBuffer) -> f64 {
        if !self.recursive() {
            return self.stencil.apply(history, self.j);
        }
        let l = self.stencil.steps;
        let w = &self.stencil.weights;
        w[0] * history.node(0, self.j)
            + self.stencil.interior * self.running
            + w[l] * history.node(l, self.j)
            + w[l + 1] * history.node(l + 1, self.j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::beta_weight;

    fn constant(n: usize, c: f64) -> InitialHistory {
        InitialHistory::Constant(vec![c; n])
    }

    #[test]
    fn capacity_covers_tau_max() {
        let h = HistoryBuffer::new(2, 0.01, 1.0, &constant(2, 1.0));
        assert_eq!(h.capacity(), 102);
        assert!(h.coverage() >= 1.0);
        let h = HistoryBuffer::new(1, 0.3, 1.0, &constant(1, 1.0));
        assert!(h.coverage() >= 1.0 + 0.3 - 1e-12);
    }

    #[test]
    fn interpolation_exact_at_nodes_and_linear_between() {
        let f = InitialHistory::Function(Arc::new(|t: f64| vec![t * t, 3.0 * t]));
        let h = HistoryBuffer::new(2, 0.1, 1.0, &f);
        for m in 0..=10 {
            let t = -(m as f64) * 0.1;
            assert_eq!(h.at(0, t), h.node(m, 0));
            assert_eq!(h.node(m, 0), (-(m as f64) * 0.1).powi(2));
        }
        // linear data is reproduced everywhere
        for k in 0..100 {
            let t = -(k as f64) * 0.0097;
            assert!((h.at(1, t) - 3.0 * t).abs() < 1e-14);
        }
    }

    #[test]
    fn push_advances_time() {
        let mut h = HistoryBuffer::new(1, 0.5, 1.0, &constant(1, 1.0));
        for k in 1..=7 {
            h.push(&[k as f64]);
        }
        assert_eq!(h.time(), 3.5);
        assert_eq!(h.latest(), &[7.0]);
        assert_eq!(h.at_lag(0, 1.0), 5.0);
        assert_eq!(h.at_lag(0, 0.25), 6.5);
    }

    #[test]
    fn constant_history_alpha_zero_is_exact() {
        for (dt, tau) in [(0.01, 1.0), (0.01, 0.537), (0.3, 1.0), (0.1, 0.05)] {
            let h = HistoryBuffer::new(1, dt, tau, &constant(1, 2.5));
            let k = distributed_kernel(&h, 0, 0.0, tau);
            assert!((k - 2.5 * tau).abs() <= 1e-12, "{dt} {tau} {k}");
        }
    }

    #[test]
    fn constant_history_matches_beta() {
        for (alpha, tau, dt) in [(2.0, 1.0, 0.01), (2.0, 0.9, 0.0025), (50.0, 0.37, 0.01), (1e-9, 2.0, 0.1)] {
            let h = HistoryBuffer::new(1, dt, tau, &constant(1, 1.7));
            let k = distributed_kernel(&h, 0, alpha, tau);
            let beta = beta_weight(alpha, tau);
            assert!((k - 1.7 * beta).abs() <= 1e-12, "{alpha} {tau} {k} {beta}");
        }
    }

    #[test]
    fn linear_history_is_exact() {
        let f = InitialHistory::Function(Arc::new(|t: f64| vec![t]));
        let h = HistoryBuffer::new(1, 0.01, 1.0, &f);
        assert!((distributed_kernel(&h, 0, 0.0, 1.0) + 0.5).abs() < 1e-13);
        // int_{-1}^0 e^{2 eta} eta d eta = (-1 + 3 e^{-2}) / 4
        let exact = (-1.0 + 3.0 * (-2.0f64).exp()) / 4.0;
        assert!((distributed_kernel(&h, 0, 2.0, 1.0) - exact).abs() < 1e-13);
    }

    #[test]
    fn smooth_history_second_order() {
        // int_{-1}^0 e^{2 eta} cos(3 eta) d eta
        let exact = {
            let (a, w) = (2.0f64, 3.0f64);
            (a - (-a).exp() * (a * w.cos() - w * w.sin())) / (a * a + w * w)
        };
        let f = InitialHistory::Function(Arc::new(|t: f64| vec![(3.0 * t).cos()]));
        let err = |dt: f64| {
            let h = HistoryBuffer::new(1, dt, 1.0, &f);
            (distributed_kernel(&h, 0, 2.0, 1.0) - exact).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn accumulator_tracks_direct_sum() {
        let f = InitialHistory::Function(Arc::new(|t: f64| vec![1.0 + 0.3 * (5.0 * t).sin(), 2.0]));
        for (alpha, tau, dt) in [(2.0, 0.9, 0.01), (0.0, 1.0, 0.0025), (3.0, 0.013, 0.01), (1.0, 0.5, 0.0037)] {
            let mut h = HistoryBuffer::new(2, dt, 1.0, &f);
            let st = KernelStencil::new(alpha, tau, dt);
            let mut acc = KernelAccumulator::new(st.clone(), 0, &h);
            for k in 0..2000 {
                let t = (k + 1) as f64 * dt;
                h.push(&[1.0 + 0.3 * (5.0 * t).sin() + 0.1 * (k % 7) as f64, 2.0]);
                acc.advance(&h);
                let direct = st.apply(&h, 0);
                assert!((acc.value(&h) - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn window_samples_end_at_len() {
        let h = HistoryBuffer::new(1, 0.1, 1.0, &constant(1, 1.0));
        let w = h.window(0, 0.35);
        assert_eq!(w.len(), 5);
        assert!((w[4].0 - 0.35).abs() < 1e-15);
        assert_eq!(h.window(0, 0.3).len(), 4);
    }
}
