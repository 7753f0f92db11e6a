//! Seeded Monte-Carlo ensembles of sample paths.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::delay::{DelayFunctionSpec, DelayKind};
use super::history::{HistoryBuffer, InitialHistory};
use super::lkf::evaluate_lkf;
use super::step::{brownian_increments, step_log_em, StepContext};
use super::SimError;
use crate::lmi::DecisionVars;
use crate::model::{derive, ModelSpec};

/// Default number of recorded samples per path when no interval is given.
const DEFAULT_RECORDS: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub paths: usize,
    pub horizon: f64,
    /// Defaults to [`default_dt`].
    pub dt: Option<f64>,
    pub seed: u64,
    pub delay_kind: DelayKind,
    pub initial: InitialHistory,
    /// Time between recorded samples; defaults to `horizon / 100`.
    pub record_interval: Option<f64>,
}

impl SimOptions {
    /// Constant initial history `u0`.
    pub fn new(u0: Vec<f64>, paths: usize, horizon: f64, seed: u64) -> Self {
        SimOptions {
            paths,
            horizon,
            dt: None,
            seed,
            delay_kind: DelayKind::Constant,
            initial: InitialHistory::Constant(u0),
            record_interval: None,
        }
    }
}

/// `min(tau_min / 20, 1e-2)`.
pub fn default_dt(model: &ModelSpec) -> f64 {
    (model.tau_bar.min() / 20.0).min(1e-2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub index: usize,
    /// States at the recorded times (shorter than the grid if aborted).
    pub states: Vec<Vec<f64>>,
    /// Functional at the recorded times, if decision variables were given.
    pub lyapunov: Vec<f64>,
    /// Smallest component over every step of the path, not just recorded ones.
    pub min_state: f64,
    pub steps_completed: usize,
    pub aborted: Option<SimError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    /// Paths still running at this time.
    pub alive: usize,
    pub mean_dev: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub mean_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub paths: Vec<PathRecord>,
    pub summary: Vec<SummaryRow>,
    pub u_star: DVector<f64>,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub delay_kind: DelayKind,
}

impl PathEnsemble {
    pub fn aborted(&self) -> usize {
        self.paths.iter().filter(|p| p.aborted.is_some()).count()
    }

    pub fn min_state(&self) -> f64 {
        self.paths.iter().map(|p| p.min_state).fold(f64::INFINITY, f64::min)
    }

    pub fn deviation(&self, state: &[f64]) -> f64 {
        state
            .iter()
            .zip(self.u_star.iter())
            .map(|(u, s)| (u - s).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn simulate_path(
    ctx: &StepContext,
    vars: Option<&DecisionVars>,
    opts: &SimOptions,
    index: usize,
    steps: usize,
    stride: usize,
) -> PathRecord {
    let n = ctx.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let tau_max = ctx.model.tau_bar.max();
    let mut history = HistoryBuffer::new(n, ctx.dt, tau_max, &opts.initial);
    let mut accs = ctx.kernel_accumulators(&history);
    let mut rec = PathRecord {
        index,
        states: Vec::new(),
        lyapunov: Vec::new(),
        min_state: history.latest().iter().copied().fold(f64::INFINITY, f64::min),
        steps_completed: 0,
        aborted: None,
    };
    let record = |h: &HistoryBuffer, rec: &mut PathRecord| -> Result<(), SimError> {
        rec.states.push(h.latest().to_vec());
        if let Some(v) = vars {
            rec.lyapunov.push(evaluate_lkf(h, ctx, v)?.total());
        }
        Ok(())
    };
    if let Err(e) = record(&history, &mut rec) {
        rec.aborted = Some(e);
        return rec;
    }
    for k in 1..=steps {
        let kernels = ctx.kernel_values(&history, &accs);
        let dw = brownian_increments(&mut rng, n, ctx.dt);
        let next = match step_log_em(ctx, &history, &kernels, &dw) {
            Ok(next) => next,
            Err(e) => {
                rec.aborted = Some(e);
                return rec;
            }
        };
        history.push(&next);
        for (_, _, acc) in accs.iter_mut() {
            acc.advance(&history);
        }
        rec.min_state = next.iter().copied().fold(rec.min_state, f64::min);
        rec.steps_completed = k;
        if k % stride == 0 || k == steps {
            if let Err(e) = record(&history, &mut rec) {
                rec.aborted = Some(e);
                return rec;
            }
        }
    }
    rec
}

/// Runs `opts.paths` independent paths. Path `k` draws its noise from a
/// ChaCha8 stream `k` under the master seed, so results do not depend on
/// scheduling or worker count.
pub fn run_ensemble(
    model: &ModelSpec,
    vars: Option<&DecisionVars>,
    opts: &SimOptions,
) -> Result<PathEnsemble, SimError> {
    if opts.paths == 0 {
        return Err(SimError::InvalidOptions("at least one path is required".into()));
    }
    if !(opts.horizon > 0.0 && opts.horizon.is_finite()) {
        return Err(SimError::InvalidOptions(format!("horizon must be positive, got {}", opts.horizon)));
    }
    let dt = opts.dt.unwrap_or_else(|| default_dt(model));
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidOptions(format!("step size must be positive, got {dt}")));
    }
    let derived = derive(model)?;
    let n = model.n();
    let probe = HistoryBuffer::new(n, dt, model.tau_bar.max(), &opts.initial);
    for back in 0..probe.capacity() {
        for j in 0..n {
            let u = probe.node(back, j);
            if !(u > 0.0 && u.is_finite()) {
                return Err(SimError::InvalidOptions(format!(
                    "initial history must be positive and finite (component {} is {u})",
                    j + 1
                )));
            }
        }
    }
    if let Some(v) = vars {
        if v.n() != n || !v.is_positive() {
            return Err(SimError::Domain("decision variables must match the model and be positive".into()));
        }
    }

    let ctx = StepContext {
        model: model.clone(),
        u_star: derived.u_star.clone(),
        delays: DelayFunctionSpec::new(opts.delay_kind, model),
        dt,
    };
    let steps = ((opts.horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let interval = opts.record_interval.unwrap_or(opts.horizon / DEFAULT_RECORDS);
    let stride = ((interval / dt).round() as usize).max(1);
    let mut times: Vec<f64> = (0..=steps).step_by(stride).map(|k| k as f64 * dt).collect();
    if !steps.is_multiple_of(stride) {
        times.push(steps as f64 * dt);
    }

    let paths: Vec<PathRecord> = crate::with_pool(|| {
        (0..opts.paths)
            .into_par_iter()
            .map(|k| simulate_path(&ctx, vars, opts, k, steps, stride))
            .collect()
    });

    let mut ens = PathEnsemble {
        times,
        paths,
        summary: Vec::new(),
        u_star: derived.u_star,
        dt,
        steps,
        seed: opts.seed,
        delay_kind: opts.delay_kind,
    };
    ens.summary = summarize(&ens, vars.is_some());
    Ok(ens)
}

fn summarize(ens: &PathEnsemble, with_v: bool) -> Vec<SummaryRow> {
    ens.times
        .iter()
        .enumerate()
        .map(|(r, &t)| {
            let live: Vec<&PathRecord> = ens.paths.iter().filter(|p| p.states.len() > r).collect();
            let mut devs: Vec<f64> = live.iter().map(|p| ens.deviation(&p.states[r])).collect();
            devs.sort_by(f64::total_cmp);
            let count = devs.len();
            let mean = |xs: &mut dyn Iterator<Item = f64>| {
                if count == 0 {
                    f64::NAN
                } else {
                    xs.sum::<f64>() / count as f64
                }
            };
            let mean_dev = mean(&mut devs.iter().copied());
            let mean_v = with_v.then(|| mean(&mut live.iter().map(|p| p.lyapunov[r])));
            SummaryRow {
                t,
                alive: count,
                mean_dev,
                q05: quantile(&devs, 0.05),
                q50: quantile(&devs, 0.5),
                q95: quantile(&devs, 0.95),
                mean_v,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn two_species(sigma: f64) -> ModelSpec {
        ModelSpec::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 2.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.3]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.1, 0.0, 0.2]),
            DVector::from_row_slice(&[2.0, 2.0]),
            DMatrix::from_element(2, 2, 1.0),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.3, 0.4]),
            DMatrix::from_element(2, 2, 0.3),
            DMatrix::from_row_slice(2, 2, &[0.0, sigma, sigma, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_paths_identical() {
        let m = two_species(0.0);
        let mut opts = SimOptions::new(vec![0.8, 0.3], 4, 2.0, 1);
        opts.delay_kind = DelayKind::Sinusoidal;
        let ens = run_ensemble(&m, None, &opts).unwrap();
        for p in &ens.paths[1..] {
            assert_eq!(p.states, ens.paths[0].states);
        }
        assert_eq!(ens.summary[0].q05, ens.summary[0].q95);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = two_species(0.8);
        let opts = SimOptions::new(vec![0.8, 0.3], 6, 1.0, 42);
        let a = run_ensemble(&m, None, &opts).unwrap();
        let b = run_ensemble(&m, None, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.paths[0].states, a.paths[1].states);
    }

    #[test]
    fn records_grid_and_final_time() {
        let m = two_species(0.1);
        let mut opts = SimOptions::new(vec![1.0, 1.0], 1, 1.0, 0);
        opts.dt = Some(0.01);
        opts.record_interval = Some(0.3);
        let ens = run_ensemble(&m, None, &opts).unwrap();
        assert_eq!(ens.steps, 100);
        assert_eq!(ens.times.len(), 5);
        assert!((ens.times[4] - 1.0).abs() < 1e-12);
        assert_eq!(ens.paths[0].states.len(), 5);
    }

    #[test]
    fn default_step() {
        let m = two_species(0.0);
        assert_eq!(default_dt(&m), 0.01);
        let mut m2 = m.clone();
        m2.tau_bar[(0, 1)] = 0.05;
        assert!((default_dt(&m2) - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_options() {
        let m = two_species(0.0);
        assert!(run_ensemble(&m, None, &SimOptions::new(vec![1.0, 1.0], 0, 1.0, 0)).is_err());
        assert!(run_ensemble(&m, None, &SimOptions::new(vec![1.0, -1.0], 1, 1.0, 0)).is_err());
        assert!(run_ensemble(&m, None, &SimOptions::new(vec![1.0, 1.0], 1, -1.0, 0)).is_err());
    }

    #[test]
    fn quantiles() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&d, 0.5), 3.0);
        assert_eq!(quantile(&d, 0.0), 1.0);
        assert!((quantile(&d, 0.95) - 4.8).abs() < 1e-12);
    }
}
