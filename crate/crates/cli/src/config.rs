//! JSON run configuration, schema `lv-stab/1`.
//!
//! Matrices are row-major nested arrays. The `model` block holds unscaled
//! data: `tau_bar` and `tau_bar_d` double as the delay patterns that sweeps
//! scale, and `scales` fixes the point used by single-model commands.

use std::path::Path;

use lvstab_core::lmi::Sigma4Mode;
use lvstab_core::sim::DelayKind;
use lvstab_core::sweep::{self, BaseModel, Equilibrium, SweepConfig};
use lvstab_core::{EquilibriumMode, ModelSpec};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA: &str = "lv-stab/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed config at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },
}

fn schema(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "A_d", default, skip_serializing_if = "Option::is_none")]
    a_d: Option<Vec<Vec<f64>>>,
    #[serde(rename = "A_D", default, skip_serializing_if = "Option::is_none")]
    a_dist: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<Vec<f64>>>,
    tau_bar: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau_bar_d: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScales {
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    tau_scale: Option<f64>,
    taud_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    lambda1: Option<Vec<f64>>,
    lambda2: Option<Vec<f64>>,
    taud_scales: Option<Vec<f64>>,
    tau_lo: Option<f64>,
    tau_hi: Option<f64>,
    tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    paths: Option<usize>,
    horizon: Option<f64>,
    dt: Option<f64>,
    delay: Option<String>,
    u0: Option<Vec<f64>>,
    record_interval: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    restarts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    model: RawModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equilibrium_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma4_mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scales: Option<RawScales>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sweep: Option<RawSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<RawSimulation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<RawSolver>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau_scale: f64,
    pub taud_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub taud_scales: Vec<f64>,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSection {
    pub paths: usize,
    pub horizon: f64,
    pub dt: Option<f64>,
    pub delay: DelayKind,
    /// Constant initial history; `None` means `1.3 u*`.
    pub u0: Option<Vec<f64>>,
    pub record_interval: Option<f64>,
}

/// Validated configuration with every default resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub description: Option<String>,
    pub a: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub a_dist: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub tau_bar: DMatrix<f64>,
    pub tau_bar_d: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub rho: Option<DVector<f64>>,
    pub u_star: Option<DVector<f64>>,
    pub equilibrium_mode: EquilibriumMode,
    pub sigma4_mode: Sigma4Mode,
    pub seed: u64,
    pub scales: Scales,
    pub sweep: SweepSection,
    pub simulation: SimulationSection,
    pub restarts: usize,
}

/// A parsed config plus the names of the fields that were defaulted.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: RunConfig,
    pub defaults_applied: Vec<String>,
}

fn matrix(field: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        let cols: Vec<String> = rows.iter().map(|r| r.len().to_string()).collect();
        return Err(schema(
            field,
            format!(
                "expected a {n}x{n} matrix, found {} rows with lengths [{}]",
                rows.len(),
                cols.join(", ")
            ),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn vector(field: &str, v: &[f64], n: usize) -> Result<DVector<f64>, ConfigError> {
    if v.len() != n {
        return Err(schema(field, format!("expected length {n}, found {}", v.len())));
    }
    Ok(DVector::from_row_slice(v))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse_sigma4(s: &str) -> Result<Sigma4Mode, ConfigError> {
    match s {
        "derivation" => Ok(Sigma4Mode::DerivationConsistent),
        "paper" => Ok(Sigma4Mode::PaperLiteral),
        other => Err(schema("sigma4_mode", format!("expected \"derivation\" or \"paper\", found {other:?}"))),
    }
}

fn parse_equilibrium(s: &str) -> Result<EquilibriumMode, ConfigError> {
    match s {
        "rho" => Ok(EquilibriumMode::RhoGiven),
        "ustar" => Ok(EquilibriumMode::UStarGiven),
        other => Err(schema(
            "equilibrium_mode",
            format!("expected \"rho\" or \"ustar\", found {other:?}"),
        )),
    }
}

fn parse_delay(s: &str) -> Result<DelayKind, ConfigError> {
    match s {
        "constant" => Ok(DelayKind::Constant),
        "sinusoidal" => Ok(DelayKind::Sinusoidal),
        other => Err(schema(
            "simulation.delay",
            format!("expected \"constant\" or \"sinusoidal\", found {other:?}"),
        )),
    }
}

fn model_error(e: lvstab_core::ModelError) -> ConfigError {
    match e {
        lvstab_core::ModelError::Shape { field, .. } | lvstab_core::ModelError::Invalid { field, .. } => {
            schema(field, e.to_string())
        }
        other => schema("model", other.to_string()),
    }
}

impl RunConfig {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    fn from_raw(raw: RawConfig) -> Result<ParsedConfig, ConfigError> {
        if raw.schema != SCHEMA {
            return Err(schema("schema", format!("expected {SCHEMA:?}, found {:?}", raw.schema)));
        }
        let mut defaults = Vec::new();
        let m = raw.model;
        let n = m.a.len();
        if n == 0 {
            return Err(schema("A", "species count must be positive"));
        }
        let a = matrix("A", &m.a, n)?;
        let mut opt_matrix = |field: &str, v: &Option<Vec<Vec<f64>>>| match v {
            Some(rows) => matrix(field, rows, n),
            None => {
                defaults.push(format!("model.{field} = 0"));
                Ok(DMatrix::zeros(n, n))
            }
        };
        let a_d = opt_matrix("A_d", &m.a_d)?;
        let a_dist = opt_matrix("A_D", &m.a_dist)?;
        let alpha = opt_matrix("alpha", &m.alpha)?;
        let tau_bar_d = opt_matrix("tau_bar_d", &m.tau_bar_d)?;
        let sigma = opt_matrix("sigma", &m.sigma)?;
        let tau_bar = matrix("tau_bar", &m.tau_bar, n)?;
        let rho = m.rho.as_deref().map(|v| vector("rho", v, n)).transpose()?;
        let u_star = m.u_star.as_deref().map(|v| vector("u_star", v, n)).transpose()?;

        let equilibrium_mode = match raw.equilibrium_mode.as_deref() {
            Some(s) => parse_equilibrium(s)?,
            None => match (&rho, &u_star) {
                (Some(_), _) => {
                    defaults.push("equilibrium_mode = rho".into());
                    EquilibriumMode::RhoGiven
                }
                (None, Some(_)) => {
                    defaults.push("equilibrium_mode = ustar".into());
                    EquilibriumMode::UStarGiven
                }
                (None, None) => {
                    return Err(schema(
                        "model",
                        "equilibrium underdetermined: give rho or u_star",
                    ))
                }
            },
        };
        match equilibrium_mode {
            EquilibriumMode::RhoGiven if rho.is_none() => {
                return Err(schema("model.rho", "equilibrium underdetermined: mode rho needs rho"))
            }
            EquilibriumMode::UStarGiven if u_star.is_none() => {
                return Err(schema(
                    "model.u_star",
                    "equilibrium underdetermined: mode ustar needs u_star",
                ))
            }
            _ => {}
        }
        if let Some(u) = &u_star {
            if u.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(schema("u_star", "equilibrium must be strictly positive"));
            }
        }

        let sigma4_mode = match raw.sigma4_mode.as_deref() {
            Some(s) => parse_sigma4(s)?,
            None => {
                defaults.push("sigma4_mode = derivation".into());
                Sigma4Mode::default()
            }
        };
        let seed = raw.seed.unwrap_or_else(|| {
            defaults.push("seed = 0".into());
            0
        });

        let sc = raw.scales.unwrap_or(RawScales {
            lambda1: None,
            lambda2: None,
            tau_scale: None,
            taud_scale: None,
        });
        let mut scale = |name: &str, v: Option<f64>| {
            v.unwrap_or_else(|| {
                defaults.push(format!("scales.{name} = 1"));
                1.0
            })
        };
        let scales = Scales {
            lambda1: scale("lambda1", sc.lambda1),
            lambda2: scale("lambda2", sc.lambda2),
            tau_scale: scale("tau_scale", sc.tau_scale),
            taud_scale: scale("taud_scale", sc.taud_scale),
        };
        for (name, v) in [
            ("scales.lambda1", scales.lambda1),
            ("scales.lambda2", scales.lambda2),
            ("scales.tau_scale", scales.tau_scale),
            ("scales.taud_scale", scales.taud_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(schema(name, format!("must be finite and nonnegative, found {v}")));
            }
        }

        let grid = SweepConfig::table1(BaseModel::example1());
        let sw = raw.sweep.unwrap_or(RawSweep {
            lambda1: None,
            lambda2: None,
            taud_scales: None,
            tau_lo: None,
            tau_hi: None,
            tolerance: None,
        });
        let sweep = SweepSection {
            lambda1: sw.lambda1.unwrap_or(grid.lambda1),
            lambda2: sw.lambda2.unwrap_or(grid.lambda2),
            taud_scales: sw.taud_scales.unwrap_or(grid.taud_scales),
            tau_lo: sw.tau_lo.unwrap_or(grid.tau_lo),
            tau_hi: sw.tau_hi.unwrap_or(grid.tau_hi),
            tolerance: sw.tolerance.unwrap_or(grid.tolerance),
        };
        if !(sweep.tau_lo > 0.0 && sweep.tau_lo <= sweep.tau_hi && sweep.tau_hi <= sweep::TAU_CAP) {
            return Err(schema(
                "sweep",
                format!("need 0 < tau_lo <= tau_hi <= {}", sweep::TAU_CAP),
            ));
        }
        if sweep.tolerance.is_nan() || sweep.tolerance <= 0.0 {
            return Err(schema("sweep.tolerance", "must be positive"));
        }
        if sweep.lambda1.is_empty() || sweep.lambda2.is_empty() || sweep.taud_scales.is_empty() {
            return Err(schema("sweep", "grids must be non-empty"));
        }

        let sim = raw.simulation.unwrap_or(RawSimulation {
            paths: None,
            horizon: None,
            dt: None,
            delay: None,
            u0: None,
            record_interval: None,
        });
        let simulation = SimulationSection {
            paths: sim.paths.unwrap_or(100),
            horizon: sim.horizon.unwrap_or(50.0),
            dt: sim.dt,
            delay: sim.delay.as_deref().map(parse_delay).transpose()?.unwrap_or_default(),
            u0: sim.u0.clone(),
            record_interval: sim.record_interval,
        };
        if simulation.paths == 0 {
            return Err(schema("simulation.paths", "must be at least 1"));
        }
        if !(simulation.horizon > 0.0 && simulation.horizon.is_finite()) {
            return Err(schema("simulation.horizon", "must be positive"));
        }
        if let Some(dt) = simulation.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(schema("simulation.dt", "must be positive"));
            }
        }
        if let Some(u0) = &simulation.u0 {
            if u0.len() != n || u0.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(schema("simulation.u0", format!("expected {n} positive entries")));
            }
        }
        let restarts = raw.solver.and_then(|s| s.restarts).unwrap_or(5);

        let cfg = RunConfig {
            description: raw.description,
            a,
            a_d,
            a_dist,
            alpha,
            tau_bar,
            tau_bar_d,
            sigma,
            rho,
            u_star,
            equilibrium_mode,
            sigma4_mode,
            seed,
            scales,
            sweep,
            simulation,
            restarts,
        };
        // model invariants at the configured scales, with a placeholder rate
        // when only u* is known
        ModelSpec::new(
            cfg.a.clone(),
            cfg.a_d.clone(),
            &cfg.a_dist * cfg.scales.lambda1,
            cfg.rho.clone().unwrap_or_else(|| DVector::from_element(n, 1.0)),
            cfg.alpha.clone(),
            &cfg.tau_bar * cfg.scales.tau_scale,
            &cfg.tau_bar_d * cfg.scales.taud_scale,
            &cfg.sigma * cfg.scales.lambda2,
        )
        .map_err(model_error)?;
        Ok(ParsedConfig {
            config: cfg,
            defaults_applied: defaults,
        })
    }

    fn to_raw(&self) -> RawConfig {
        RawConfig {
            schema: SCHEMA.to_string(),
            description: self.description.clone(),
            model: RawModel {
                a: rows(&self.a),
                a_d: Some(rows(&self.a_d)),
                a_dist: Some(rows(&self.a_dist)),
                alpha: Some(rows(&self.alpha)),
                tau_bar: rows(&self.tau_bar),
                tau_bar_d: Some(rows(&self.tau_bar_d)),
                sigma: Some(rows(&self.sigma)),
                rho: self.rho.as_ref().map(|v| v.iter().copied().collect()),
                u_star: self.u_star.as_ref().map(|v| v.iter().copied().collect()),
            },
            equilibrium_mode: Some(self.equilibrium_mode.as_str().to_string()),
            sigma4_mode: Some(self.sigma4_mode.as_str().to_string()),
            seed: Some(self.seed),
            scales: Some(RawScales {
                lambda1: Some(self.scales.lambda1),
                lambda2: Some(self.scales.lambda2),
                tau_scale: Some(self.scales.tau_scale),
                taud_scale: Some(self.scales.taud_scale),
            }),
            sweep: Some(RawSweep {
                lambda1: Some(self.sweep.lambda1.clone()),
                lambda2: Some(self.sweep.lambda2.clone()),
                taud_scales: Some(self.sweep.taud_scales.clone()),
                tau_lo: Some(self.sweep.tau_lo),
                tau_hi: Some(self.sweep.tau_hi),
                tolerance: Some(self.sweep.tolerance),
            }),
            simulation: Some(RawSimulation {
                paths: Some(self.simulation.paths),
                horizon: Some(self.simulation.horizon),
                dt: self.simulation.dt,
                delay: Some(self.simulation.delay.as_str().to_string()),
                u0: self.simulation.u0.clone(),
                record_interval: self.simulation.record_interval,
            }),
            solver: Some(RawSolver {
                restarts: Some(self.restarts),
            }),
        }
    }

    /// Canonical JSON with every default written out.
    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_raw()).expect("config serialises");
        s.push('\n');
        s
    }

    /// SHA-256 of [`RunConfig::render`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }

    /// Unscaled data and delay patterns for the sweep module.
    pub fn base_model(&self) -> BaseModel {
        let equilibrium = match self.equilibrium_mode {
            EquilibriumMode::RhoGiven => Equilibrium::Rho(self.rho.clone().expect("validated")),
            EquilibriumMode::UStarGiven => Equilibrium::UStar(self.u_star.clone().expect("validated")),
        };
        BaseModel {
            a: self.a.clone(),
            a_d: self.a_d.clone(),
            a_dist: self.a_dist.clone(),
            alpha: self.alpha.clone(),
            sigma: self.sigma.clone(),
            tau_pattern: self.tau_bar.clone(),
            taud_pattern: self.tau_bar_d.clone(),
            equilibrium,
        }
    }

    /// Model at `self.scales`.
    pub fn model(&self) -> Result<ModelSpec, sweep::SweepError> {
        let s = self.scales;
        sweep::scaled_model(&self.base_model(), s.lambda1, s.lambda2, s.tau_scale, s.taud_scale)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let mut cfg = SweepConfig::table1(self.base_model());
        cfg.lambda1 = self.sweep.lambda1.clone();
        cfg.lambda2 = self.sweep.lambda2.clone();
        cfg.taud_scales = self.sweep.taud_scales.clone();
        cfg.tau_lo = self.sweep.tau_lo;
        cfg.tau_hi = self.sweep.tau_hi;
        cfg.tolerance = self.sweep.tolerance;
        cfg.mode = self.sigma4_mode;
        cfg.solver.seed = self.seed;
        cfg.solver.restarts = self.restarts;
        cfg
    }
}

/// Line and column of a serde_json error, as reported by the parser.
fn parse_error(e: serde_json::Error) -> ConfigError {
    ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn parse_str(text: &str) -> Result<ParsedConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            // type or unknown-field problems; name the field when serde does
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".to_string());
            if msg.starts_with("unknown field") || msg.starts_with("missing field") {
                return schema(&field, msg);
            }
            parse_error(e)
        } else {
            parse_error(e)
        }
    })?;
    RunConfig::from_raw(raw)
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_str(&text)
}
