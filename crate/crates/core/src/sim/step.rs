//! One Euler-Maruyama step in logarithmic coordinates.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::delay::DelayFunctionSpec;
use super::history::{HistoryBuffer, KernelAccumulator, KernelStencil};
use super::SimError;
use crate::model::{pair_index, ModelSpec};

/// Log-state magnitude beyond which a path is abandoned.
pub const LOG_OVERFLOW: f64 = 700.0;

/// Model data needed by the stepper.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub model: ModelSpec,
    pub u_star: DVector<f64>,
    pub delays: DelayFunctionSpec,
    pub dt: f64,
}

impl StepContext {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    /// One accumulator per pair with a nonzero distributed coefficient.
    pub fn kernel_accumulators(&self, history: &HistoryBuffer) -> Vec<(usize, usize, KernelAccumulator)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.model.a_dist[(i, j)] != 0.0 {
                    let st = KernelStencil::new(self.model.alpha[(i, j)], self.model.tau_bar[(i, j)], self.dt);
                    out.push((i, j, KernelAccumulator::new(st, j, history)));
                }
            }
        }
        out
    }

    /// Distributed integrals as a lifted n^2 vector (zero where unused).
    pub fn kernel_values(
        &self,
        history: &HistoryBuffer,
        accumulators: &[(usize, usize, KernelAccumulator)],
    ) -> Vec<f64> {
        let n = self.n();
        let mut k = vec![0.0; n * n];
        for (i, j, acc) in accumulators {
            k[pair_index(n, *i, *j)] = acc.value(history);
        }
        k
    }
}

/// Advances `v = ln u` by one step from the newest node of `history`.
///
/// `kernels` holds the distributed integrals at the current time in lifted
/// layout, `dw` the Brownian increments (already scaled by `sqrt(dt)`).
pub fn step_log_em(
    ctx: &StepContext,
    history: &HistoryBuffer,
    kernels: &[f64],
    dw: &[f64],
) -> Result<Vec<f64>, SimError> {
    let n = ctx.n();
    let m = &ctx.model;
    let t = history.time();
    let u = history.latest();
    let mut next = vec![0.0; n];
    for i in 0..n {
        let mut f = m.rho[i];
        let mut g = 0.0;
        for j in 0..n {
            f -= m.a[(i, j)] * u[j];
            let ad = m.a_d[(i, j)];
            if ad != 0.0 {
                f -= ad * history.at_lag(j, ctx.delays.tau(i, j, t));
            }
            f -= m.a_dist[(i, j)] * kernels[pair_index(n, i, j)];
            g += m.sigma[(i, j)] * (u[j] - ctx.u_star[j]);
        }
        let v = u[i].ln() + (f - 0.5 * g * g) * ctx.dt + g * dw[i];
        if !v.is_finite() || v.abs() > LOG_OVERFLOW {
            return Err(SimError::Overflow {
                species: i,
                time: t + ctx.dt,
                log_state: v,
            });
        }
        next[i] = v.exp();
    }
    Ok(next)
}

/// `n` independent N(0, dt) draws.
pub fn brownian_increments<R: Rng + ?Sized>(rng: &mut R, n: usize, dt: f64) -> Vec<f64> {
    let s = dt.sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::delay::DelayKind;
    use crate::sim::history::InitialHistory;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn logistic() -> StepContext {
        let one = DMatrix::from_element(1, 1, 1.0);
        let zero = DMatrix::zeros(1, 1);
        let model = ModelSpec::new(
            one.clone(),
            zero.clone(),
            zero.clone(),
            DVector::from_element(1, 1.0),
            zero.clone(),
            one,
            zero.clone(),
            zero,
        )
        .unwrap();
        StepContext {
            delays: DelayFunctionSpec::new(DelayKind::Constant, &model),
            model,
            u_star: DVector::from_element(1, 1.0),
            dt: 0.01,
        }
    }

    fn integrate(ctx: &StepContext, u0: f64, horizon: f64) -> f64 {
        let mut h = HistoryBuffer::new(1, ctx.dt, 1.0, &InitialHistory::Constant(vec![u0]));
        let steps = (horizon / ctx.dt).round() as usize;
        for _ in 0..steps {
            let next = step_log_em(ctx, &h, &[0.0], &[0.0]).unwrap();
            h.push(&next);
        }
        h.latest()[0]
    }

    #[test]
    fn logistic_first_order() {
        let exact = |t: f64| 1.0 / (1.0 + (0.5 - 1.0) * (-t).exp());
        let mut ctx = logistic();
        let mut errs = Vec::new();
        for dt in [0.02, 0.01, 0.005] {
            ctx.dt = dt;
            errs.push((integrate(&ctx, 2.0, 2.0) - exact(2.0)).abs());
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.5..2.5).contains(&r), "{r}");
        }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let ctx = logistic();
        let h = HistoryBuffer::new(1, ctx.dt, 1.0, &InitialHistory::Constant(vec![1.0]));
        assert_eq!(step_log_em(&ctx, &h, &[0.0], &[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn overflow_is_reported() {
        let mut ctx = logistic();
        ctx.model.a[(0, 0)] = -1.0;
        ctx.dt = 1.0;
        let h = HistoryBuffer::new(1, 1.0, 1.0, &InitialHistory::Constant(vec![1e300]));
        assert!(matches!(
            step_log_em(&ctx, &h, &[0.0], &[0.0]),
            Err(SimError::Overflow { species: 0, .. })
        ));
    }

    #[test]
    fn brownian_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dt = 0.01;
        let n = 100_000;
        let draws = brownian_increments(&mut rng, n, dt);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 3.0 * (dt / n as f64).sqrt());
        assert!((var - dt).abs() < 3.0 * dt * (2.0 / n as f64).sqrt());
    }
}
