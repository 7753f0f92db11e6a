//! Subcommands. Each returns its exit code and the report printed on stdout;
//! artifacts go under `--out`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lvstab_core::lmi::{build_problem, DecisionVars, Sigma4Mode};
use lvstab_core::solver::{certify, solve_feasibility, FeasibilityStatus, FeasibilityVerdict, SolveOptions};
use lvstab_core::sim::{render_summary_csv, render_svg, render_timeseries_csv, run_ensemble, InitialHistory, SimOptions};
use lvstab_core::sweep::{
    a_d_zero_tau_independence_check, madb_bisect, render_csv, render_text_table, run_table, table1_reference, CellSpec,
    scaled_model, CellStatus, Equilibrium,
};
use lvstab_core::model::compute_beta;
use lvstab_core::{derive, DerivedModel, EquilibriumMode, ModelSpec};
use nalgebra::DVector;
use thiserror::Error;

use crate::config::{parse_config, parse_str, ConfigError, RunConfig};
use crate::provenance::{comment_block, fmt_vec, header};

pub const EXIT_FEASIBLE: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_INDETERMINATE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub const EXAMPLE1_CONFIG: &str = include_str!("../configs/example1.json");
pub const EXAMPLE2_FIRST_CONFIG: &str = include_str!("../configs/example2_first.json");
pub const EXAMPLE2_SECOND_CONFIG: &str = include_str!("../configs/example2_second.json");

const DEFAULT_OUT: &str = "lvstab-out";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Sigma4Arg {
    Derivation,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EquilibriumArg {
    Rho,
    Ustar,
}

#[derive(Debug, Parser)]
#[command(
    name = "lvstab",
    version,
    about = "Delay-dependent stability certificates for stochastic Lotka-Volterra systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: GlobalOpts,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide the LMI at the configured scales (exit 0 feasible, 1 infeasible, 2 indeterminate)
    Certify,
    /// Bisect the delay-bound scale for the configured (lambda1, lambda2, taud_scale)
    Madb,
    /// Run the full delay-bound grid and the tau-independence check
    Table1,
    /// Simulate a path ensemble and evaluate the certified functional along it
    Simulate,
    /// Run both two-species datasets without delays
    Example2,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON config (schema lv-stab/1); defaults to the bundled three-species example
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub sigma4_mode: Option<Sigma4Arg>,
    #[arg(long, global = true, value_enum)]
    pub equilibrium_mode: Option<EquilibriumArg>,
    /// Artifact directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "M")]
    pub paths: Option<usize>,
    #[arg(long, global = true, value_name = "T")]
    pub horizon: Option<f64>,
    #[arg(long, global = true, value_name = "DT")]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub lambda1: Option<f64>,
    #[arg(long, global = true)]
    pub lambda2: Option<f64>,
    #[arg(long, global = true)]
    pub tau_scale: Option<f64>,
    #[arg(long, global = true)]
    pub taud_scale: Option<f64>,
}

impl GlobalOpts {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    /// Loads the config and applies flag overrides, then validates the result
    /// again through the canonical rendering.
    pub fn load(&self) -> Result<RunConfig, CliError> {
        let parsed = match &self.config {
            Some(path) => parse_config(path)?,
            None => parse_str(EXAMPLE1_CONFIG)?,
        };
        let mut cfg = parsed.config;
        self.apply_common(&mut cfg);
        if let Some(m) = self.equilibrium_mode {
            cfg.equilibrium_mode = match m {
                EquilibriumArg::Rho => EquilibriumMode::RhoGiven,
                EquilibriumArg::Ustar => EquilibriumMode::UStarGiven,
            };
        }
        let s = &mut cfg.scales;
        s.lambda1 = self.lambda1.unwrap_or(s.lambda1);
        s.lambda2 = self.lambda2.unwrap_or(s.lambda2);
        s.tau_scale = self.tau_scale.unwrap_or(s.tau_scale);
        s.taud_scale = self.taud_scale.unwrap_or(s.taud_scale);
        let sim = &mut cfg.simulation;
        sim.paths = self.paths.unwrap_or(sim.paths);
        sim.horizon = self.horizon.unwrap_or(sim.horizon);
        if self.dt.is_some() {
            sim.dt = self.dt;
        }
        Ok(parse_str(&cfg.render())?.config)
    }

    fn apply_common(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(m) = self.sigma4_mode {
            cfg.sigma4_mode = match m {
                Sigma4Arg::Derivation => Sigma4Mode::DerivationConsistent,
                Sigma4Arg::Paper => Sigma4Mode::PaperLiteral,
            };
        }
    }
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    let io = |e: std::io::Error, p: &Path| CliError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| io(e, &path))?;
    Ok(path)
}

fn solver_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        seed: cfg.seed,
        restarts: cfg.restarts,
        ..SolveOptions::default()
    }
}

fn status_code(s: FeasibilityStatus) -> i32 {
    match s {
        FeasibilityStatus::Feasible => EXIT_FEASIBLE,
        FeasibilityStatus::Infeasible => EXIT_INFEASIBLE,
        FeasibilityStatus::Indeterminate => EXIT_INDETERMINATE,
    }
}

struct Certificate {
    model: ModelSpec,
    u_star: DVector<f64>,
    dim: usize,
    verdict: FeasibilityVerdict,
    recertified: Option<f64>,
    /// Set when the growth rates implied by a given u* are not positive.
    note: Option<String>,
}

/// Model and derived data for the LMI. The LMI only needs `u*`, not the
/// growth rates, so a given `u*` whose implied rates are nonpositive is still
/// decidable; the model then carries placeholder rates and a note.
fn lmi_inputs(cfg: &RunConfig) -> Result<(ModelSpec, DerivedModel, Option<String>), CliError> {
    let strict = cfg.model().map_err(runtime).and_then(|m| {
        let d = derive(&m).map_err(runtime)?;
        Ok((m, d))
    });
    let target = match (&strict, cfg.equilibrium_mode, &cfg.u_star) {
        (Err(_), EquilibriumMode::UStarGiven, Some(u)) => u.clone(),
        _ => return strict.map(|(m, d)| (m, d, None)),
    };
    let mut base = cfg.base_model();
    base.equilibrium = Equilibrium::Rho(DVector::from_element(cfg.n(), 1.0));
    let s = cfg.scales;
    let model = scaled_model(&base, s.lambda1, s.lambda2, s.tau_scale, s.taud_scale).map_err(runtime)?;
    let beta = compute_beta(&model.alpha, &model.tau_bar);
    let a_beta_dist = beta.component_mul(&model.a_dist);
    let a_tilde = &model.a + &model.a_d + &a_beta_dist;
    let implied = &a_tilde * &target;
    if implied.iter().all(|x| *x > 0.0) {
        // the strict path failed for another reason
        return strict.map(|(m, d)| (m, d, None));
    }
    let note = format!(
        "implied rho {} is not positive: no admissible growth rates have this equilibrium; the LMI is decided at the given u*",
        fmt_vec(&implied)
    );
    let derived = DerivedModel {
        beta,
        a_beta_dist,
        a_tilde,
        u_star: target,
        tau_bar_max: model.tau_bar.max(),
    };
    Ok((model, derived, Some(note)))
}

fn certificate_for(cfg: &RunConfig) -> Result<Certificate, CliError> {
    let (model, derived, note) = lmi_inputs(cfg)?;
    let problem = build_problem(&model, &derived, cfg.sigma4_mode);
    let verdict = solve_feasibility(&problem, &solver_options(cfg)).map_err(runtime)?;
    let recertified = match &verdict.witness {
        Some(w) => Some(certify(&problem, &w.to_flat()).map_err(runtime)?),
        None => None,
    };
    Ok(Certificate {
        model,
        u_star: derived.u_star,
        dim: problem.dim(),
        verdict,
        recertified,
        note,
    })
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn witness_lines(out: &mut String, w: &DecisionVars, indent: &str) {
    let _ = writeln!(out, "{indent}witness (normalised so the entries sum to 1):");
    let _ = writeln!(out, "{indent}  p = {}", fmt_list(w.p.as_slice()));
    let _ = writeln!(out, "{indent}  q = {}", fmt_list(w.q.as_slice()));
    let _ = writeln!(out, "{indent}  r = {}", fmt_list(w.r.as_slice()));
    let _ = writeln!(out, "{indent}  s = {}", fmt_list(w.s.as_slice()));
}

fn verdict_lines(out: &mut String, c: &Certificate, indent: &str) {
    let v = &c.verdict;
    let _ = writeln!(out, "{indent}verdict {}", v.status);
    let _ = writeln!(
        out,
        "{indent}lambda_max {:.6e} (strictness threshold {:.6e})",
        v.margin, v.threshold
    );
    if let Some(r) = c.recertified {
        let _ = writeln!(out, "{indent}recertified lambda_max {r:.6e}");
    }
    let _ = writeln!(out, "{indent}dual lower bound {:.6e}", v.lower_bound);
    let _ = writeln!(
        out,
        "{indent}LMI {0}x{0}, {1} decision variables, {2} barrier stages, {3} restarts, termination {4}",
        c.dim,
        v.best_point.len(),
        v.trace.len(),
        v.restarts_used,
        format!("{:?}", v.termination).to_lowercase()
    );
    if let Some(w) = &v.witness {
        witness_lines(out, w, indent);
    }
}

pub fn cmd_certify(opts: &GlobalOpts) -> Result<(i32, String), CliError> {
    let cfg = opts.load()?;
    let c = certificate_for(&cfg)?;
    let mut out = comment_block(&header(&cfg, "certify", Some(&c.u_star)));
    match &c.note {
        Some(note) => {
            let _ = writeln!(out, "{note}");
        }
        None => {
            let _ = writeln!(out, "rho {}", fmt_vec(&c.model.rho));
        }
    }
    verdict_lines(&mut out, &c, "");
    write_artifact(&opts.out_dir(), "certify.txt", &out)?;
    Ok((status_code(c.verdict.status), out))
}

fn reference_value(cell: &CellSpec) -> Option<Option<f64>> {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    table1_reference()
        .into_iter()
        .find(|r| close(r.lambda1, cell.lambda1) && close(r.lambda2, cell.lambda2) && close(r.taud_scale, cell.taud_scale))
        .map(|r| r.madb)
}

fn base_u_star(cfg: &RunConfig) -> Option<DVector<f64>> {
    match cfg.base_model().equilibrium {
        Equilibrium::UStar(u) => Some(u),
        Equilibrium::Rho(_) => None,
    }
}

pub fn cmd_madb(opts: &GlobalOpts) -> Result<(i32, String), CliError> {
    let cfg = opts.load()?;
    let sweep = cfg.sweep_config();
    let cell = CellSpec {
        lambda1: cfg.scales.lambda1,
        lambda2: cfg.scales.lambda2,
        taud_scale: cfg.scales.taud_scale,
    };
    let r = madb_bisect(&sweep, &cell).map_err(runtime)?;
    let mut out = comment_block(&header(&cfg, "madb", base_u_star(&cfg).as_ref()));
    let _ = writeln!(
        out,
        "cell lambda1 {} lambda2 {} taud_scale {}",
        cell.lambda1, cell.lambda2, cell.taud_scale
    );
    let _ = writeln!(out, "status {}", r.status.as_str());
    match r.madb {
        Some(m) => {
            let _ = writeln!(out, "madb {m:.4}");
        }
        None => {
            let _ = writeln!(out, "madb none");
        }
    }
    let _ = writeln!(
        out,
        "bracket [{}, {}] tolerance {} ({} probes)",
        r.bracket.0, r.bracket.1, sweep.tolerance, r.probes
    );
    let _ = writeln!(out, "lambda_max at bracket ends {:.6e} / {:.6e}", r.margin_lo, r.margin_hi);
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    match reference_value(&cell) {
        Some(Some(v)) => {
            let _ = writeln!(out, "published value {v} (reference only, equilibrium unspecified in source)");
        }
        Some(None) => {
            let _ = writeln!(out, "published value infeasible (reference only)");
        }
        None => {}
    }
    if let Some(w) = &r.witness {
        witness_lines(&mut out, w, "");
    }
    write_artifact(&opts.out_dir(), "madb.txt", &out)?;
    Ok((0, out))
}

pub fn cmd_table1(opts: &GlobalOpts) -> Result<(i32, String), CliError> {
    let cfg = opts.load()?;
    let sweep = cfg.sweep_config();
    let result = run_table(&sweep).map_err(runtime)?;
    let u_star = base_u_star(&cfg);
    let head = header(&cfg, "table1", u_star.as_ref());

    let mut text = comment_block(&head);
    if let Some(u) = &u_star {
        let _ = writeln!(
            text,
            "assumption: equilibrium fixed at u* = {} for every cell; growth rates are implied per cell",
            fmt_vec(u)
        );
    }
    text.push_str(&render_text_table(&result, &sweep));
    for c in result.cells.iter().filter(|c| c.status == CellStatus::Failed) {
        let _ = writeln!(
            text,
            "error at lambda2 {} lambda1 {} taud {}: {}",
            c.spec.lambda2,
            c.spec.lambda1,
            c.spec.taud_scale,
            c.error.as_deref().unwrap_or("unknown")
        );
    }
    for c in &result.cells {
        for w in &c.warnings {
            let _ = writeln!(
                text,
                "warning at lambda2 {} lambda1 {} taud {}: {w}",
                c.spec.lambda2, c.spec.lambda1, c.spec.taud_scale
            );
        }
    }
    let _ = writeln!(text, "\ntau-independence with lambda1 = 0:");
    for &l2 in &sweep.lambda2 {
        match a_d_zero_tau_independence_check(&sweep, l2) {
            Ok(rep) => {
                for row in &rep.rows {
                    let v: Vec<String> = row
                        .verdicts
                        .iter()
                        .map(|(tau, s, _)| format!("tau {tau}: {s}"))
                        .collect();
                    let _ = writeln!(
                        text,
                        "  lambda2 {l2} taud {}: {} ({})",
                        row.taud_scale,
                        v.join(", "),
                        if row.consistent() { "consistent" } else { "INCONSISTENT" }
                    );
                }
                let b: Vec<String> = rep.boundary.iter().map(|(t, s, _)| format!("{t} {s}")).collect();
                let _ = writeln!(text, "  lambda2 {l2} at tau {}: {}", lvstab_core::sweep::TAU_CAP, b.join(", "));
                match rep.flip() {
                    Some((a, b)) => {
                        let _ = writeln!(text, "  lambda2 {l2} feasibility flips between taud {a} and {b}");
                    }
                    None => {
                        let _ = writeln!(text, "  lambda2 {l2} no flip in the scanned range");
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(text, "  lambda2 {l2}: error: {e}");
            }
        }
    }

    let csv = render_csv(&result, &sweep, &head);
    let dir = opts.out_dir();
    let p1 = write_artifact(&dir, "table1.csv", &csv)?;
    let p2 = write_artifact(&dir, "table1.txt", &text)?;
    let mut out = text;
    let _ = writeln!(out, "\nwrote {} and {}", p1.display(), p2.display());
    Ok((0, out))
}

pub fn cmd_simulate(opts: &GlobalOpts) -> Result<(i32, String), CliError> {
    let cfg = opts.load()?;
    let c = certificate_for(&cfg)?;
    if let Some(note) = &c.note {
        return Err(CliError::Runtime(format!("cannot simulate: {note}")));
    }
    let sim = &cfg.simulation;
    let u0 = sim
        .u0
        .clone()
        .unwrap_or_else(|| c.u_star.iter().map(|u| 1.3 * u).collect());
    let sim_opts = SimOptions {
        paths: sim.paths,
        horizon: sim.horizon,
        dt: sim.dt,
        seed: cfg.seed,
        delay_kind: sim.delay,
        initial: InitialHistory::Constant(u0.clone()),
        record_interval: sim.record_interval,
    };
    let ens = run_ensemble(&c.model, c.verdict.witness.as_ref(), &sim_opts).map_err(runtime)?;

    let mut head = header(&cfg, "simulate", Some(&c.u_star));
    head.push(format!(
        "certificate {} lambda_max {:.6e}",
        c.verdict.status, c.verdict.margin
    ));
    head.push(format!(
        "paths {} horizon {} dt {} steps {} delay {}",
        sim.paths,
        sim.horizon,
        ens.dt,
        ens.steps,
        ens.delay_kind.as_str()
    ));
    head.push(format!("u0 {}", fmt_vec(&DVector::from_vec(u0))));

    let dir = opts.out_dir();
    let ts = render_timeseries_csv(&ens, 0, &head);
    let summary = render_summary_csv(&ens, &head);
    let svg = render_svg(&ens, &format!("lvstab simulate, seed {}", cfg.seed));
    write_artifact(&dir, "timeseries.csv", &ts)?;
    write_artifact(&dir, "summary.csv", &summary)?;
    write_artifact(&dir, "plot.svg", &svg)?;

    let mut out = comment_block(&head);
    let _ = writeln!(
        out,
        "aborted paths {} of {}, smallest state {:e}",
        ens.aborted(),
        ens.paths.len(),
        ens.min_state()
    );
    if let (Some(first), Some(last)) = (ens.summary.first(), ens.summary.last()) {
        let _ = writeln!(
            out,
            "mean |u - u*| {:.6e} at t = 0, {:.6e} at t = {}",
            first.mean_dev, last.mean_dev, last.t
        );
        match (first.mean_v, last.mean_v) {
            (Some(v0), Some(v1)) => {
                let _ = writeln!(out, "mean V {v0:.6e} at t = 0, {v1:.6e} at t = {}", last.t);
                if v1 <= 1.05 * v0 {
                    let _ = writeln!(
                        out,
                        "sample mean of V at the horizon is consistent with E V(T) <= E V(0) at Monte-Carlo resolution"
                    );
                } else {
                    let _ = writeln!(out, "sample mean of V grew over the horizon (ratio {:.4})", v1 / v0);
                }
            }
            _ => {
                let _ = writeln!(out, "no certificate at this configuration, so V was not evaluated");
            }
        }
    }
    let _ = writeln!(out, "wrote timeseries.csv, summary.csv, plot.svg to {}", dir.display());
    Ok((0, out))
}

pub fn cmd_example2(opts: &GlobalOpts) -> Result<(i32, String), CliError> {
    let load = |text: &str| -> Result<RunConfig, CliError> {
        let mut cfg = parse_str(text)?.config;
        opts.apply_common(&mut cfg);
        Ok(parse_str(&cfg.render())?.config)
    };
    let first = load(EXAMPLE2_FIRST_CONFIG)?;
    let second = load(EXAMPLE2_SECOND_CONFIG)?;
    let mut out = String::new();

    let _ = writeln!(out, "# first dataset");
    out.push_str(&comment_block(&header(&first, "example2", None)));
    let c1 = certificate_for(&first)?;
    let _ = writeln!(out, "A {:?}", rows(&first.a));
    let _ = writeln!(out, "rho {}", fmt_vec(&c1.model.rho));
    let _ = writeln!(out, "u* {}", fmt_vec(&c1.u_star));
    verdict_lines(&mut out, &c1, "");

    let _ = writeln!(out, "\n# second dataset");
    out.push_str(&comment_block(&header(&second, "example2", None)));
    let _ = writeln!(out, "A {:?}", rows(&second.a));
    let stated = second.rho.clone().expect("bundled config states rho");
    let target = second.u_star.clone().expect("bundled config states u*");
    let implied = &second.a * &target;
    let _ = writeln!(out, "stated rho {}", fmt_vec(&stated));
    let _ = writeln!(
        out,
        "A u* at u* = {} is {}, {} the stated rho",
        fmt_vec(&target),
        fmt_vec(&implied),
        if (&implied - &stated).amax() > 1e-12 {
            "INCONSISTENT with"
        } else {
            "equal to"
        }
    );
    let mut rho_mode = second.clone();
    rho_mode.equilibrium_mode = EquilibriumMode::RhoGiven;
    let rho_result = rho_mode.model().map_err(runtime).and_then(|m| derive(&m).map_err(runtime));
    match rho_result {
        Ok(d) => {
            let _ = writeln!(out, "rho-given: u* = {}", fmt_vec(&d.u_star));
        }
        Err(e) => {
            let _ = writeln!(out, "rho-given: {e}");
        }
    }
    let c2 = certificate_for(&second)?;
    let _ = writeln!(
        out,
        "u*-given run with u* = {} (rho implied {}):",
        fmt_vec(&c2.u_star),
        fmt_vec(&c2.model.rho)
    );
    verdict_lines(&mut out, &c2, "  ");

    write_artifact(&opts.out_dir(), "example2.txt", &out)?;
    Ok((0, out))
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn dispatch(cli: &Cli) -> Result<(i32, String), CliError> {
    match cli.command {
        Command::Certify => cmd_certify(&cli.opts),
        Command::Madb => cmd_madb(&cli.opts),
        Command::Table1 => cmd_table1(&cli.opts),
        Command::Simulate => cmd_simulate(&cli.opts),
        Command::Example2 => cmd_example2(&cli.opts),
    }
}
