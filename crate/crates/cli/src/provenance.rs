//! Header lines stamped on every artifact.
//!
//! Nothing time- or host-dependent goes in here: two runs with the same
//! header must write the same bytes.

use nalgebra::DVector;

use crate::config::RunConfig;

pub fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(", "))
}

/// `command`, tool version, config hash, seed, modes and scales.
pub fn header(cfg: &RunConfig, command: &str, u_star: Option<&DVector<f64>>) -> Vec<String> {
    let s = cfg.scales;
    let mut lines = vec![
        format!("lvstab {} {command}", env!("CARGO_PKG_VERSION")),
        format!("config_sha256 {}", cfg.hash()),
        format!("seed {}", cfg.seed),
        format!("sigma4_mode {}", cfg.sigma4_mode.as_str()),
        format!("equilibrium_mode {}", cfg.equilibrium_mode.as_str()),
        format!(
            "scales lambda1 {} lambda2 {} tau_scale {} taud_scale {}",
            s.lambda1, s.lambda2, s.tau_scale, s.taud_scale
        ),
    ];
    if let Some(u) = u_star {
        lines.push(format!("u_star {}", fmt_vec(u)));
    }
    lines
}

pub fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}
