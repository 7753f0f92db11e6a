//! Concrete time-varying delays inside the admissible envelope.

use nalgebra::DMatrix;

use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DelayKind {
    /// `tau_ij(t) = tau_bar_ij`.
    #[default]
    Constant,
    /// `tau_ij(t) = 0.55 tau_bar + 0.45 tau_bar sin(omega t)` with
    /// `omega = tau_bar_d / (0.45 tau_bar)`, so both bounds are attained.
    Sinusoidal,
}

impl DelayKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DelayKind::Constant => "constant",
            DelayKind::Sinusoidal => "sinusoidal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayFunctionSpec {
    pub kind: DelayKind,
    center: DMatrix<f64>,
    amplitude: DMatrix<f64>,
    omega: DMatrix<f64>,
}

impl DelayFunctionSpec {
    pub fn new(kind: DelayKind, model: &ModelSpec) -> Self {
        let tau_bar = &model.tau_bar;
        match kind {
            DelayKind::Constant => DelayFunctionSpec {
                kind,
                center: tau_bar.clone(),
                amplitude: DMatrix::zeros(tau_bar.nrows(), tau_bar.ncols()),
                omega: DMatrix::zeros(tau_bar.nrows(), tau_bar.ncols()),
            },
            DelayKind::Sinusoidal => {
                let amplitude = tau_bar * 0.45;
                let omega = model
                    .tau_bar_d
                    .zip_map(&amplitude, |d, a| d.max(0.0) / a);
                DelayFunctionSpec {
                    kind,
                    center: tau_bar * 0.55,
                    amplitude,
                    omega,
                }
            }
        }
    }

    #[inline]
    pub fn tau(&self, i: usize, j: usize, t: f64) -> f64 {
        let a = self.amplitude[(i, j)];
        if a == 0.0 {
            self.center[(i, j)]
        } else {
            self.center[(i, j)] + a * (self.omega[(i, j)] * t).sin()
        }
    }

    pub fn derivative(&self, i: usize, j: usize, t: f64) -> f64 {
        let w = self.omega[(i, j)];
        self.amplitude[(i, j)] * w * (w * t).cos()
    }
}
