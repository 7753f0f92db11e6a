//! CSV and SVG renderings of an ensemble.

use std::fmt::Write as _;

use super::ensemble::PathEnsemble;

fn comments(out: &mut String, header: &[String]) {
    for line in header {
        let _ = writeln!(out, "# {line}");
    }
}

/// `t, u_1..u_n[, V]` for one path.
pub fn render_timeseries_csv(ens: &PathEnsemble, path: usize, header: &[String]) -> String {
    let mut out = String::new();
    comments(&mut out, header);
    let p = &ens.paths[path];
    let n = ens.u_star.len();
    let with_v = !p.lyapunov.is_empty();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("u_{i}")));
    if with_v {
        cols.push("V".into());
    }
    let _ = writeln!(out, "{}", cols.join(","));
    for (r, state) in p.states.iter().enumerate() {
        let mut row = vec![format!("{}", ens.times[r])];
        row.extend(state.iter().map(|u| format!("{u}")));
        if with_v {
            row.push(format!("{}", p.lyapunov[r]));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    if let Some(e) = &p.aborted {
        let _ = writeln!(out, "# path aborted: {e}");
    }
    out
}

/// Per recorded time: survivors, mean and 5/50/95% quantiles of `|u - u*|`,
/// and the mean functional when available.
pub fn render_summary_csv(ens: &PathEnsemble, header: &[String]) -> String {
    let mut out = String::new();
    comments(&mut out, header);
    let _ = writeln!(
        out,
        "# paths {} aborted {} min_state {}",
        ens.paths.len(),
        ens.aborted(),
        ens.min_state()
    );
    for p in ens.paths.iter().filter(|p| p.aborted.is_some()) {
        if let Some(e) = &p.aborted {
            let _ = writeln!(out, "# path {} aborted: {e}", p.index);
        }
    }
    let _ = writeln!(out, "t,alive,mean_dev,q05,q50,q95,mean_V");
    for s in &ens.summary {
        let v = s.mean_v.map(|v| format!("{v}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.t, s.alive, s.mean_dev, s.q05, s.q50, s.q95, v
        );
    }
    out
}

/// Mean deviation with the 5-95% band as a standalone SVG document.
pub fn render_svg(ens: &PathEnsemble, title: &str) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let rows: Vec<_> = ens.summary.iter().filter(|s| s.alive > 0).collect();
    let t_max = rows.last().map(|s| s.t).unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let y_max = rows.iter().map(|s| s.q95).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let x = |t: f64| pad + (w - 2.0 * pad) * t / t_max;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;

    let mut band: Vec<String> = rows.iter().map(|s| format!("{:.2},{:.2}", x(s.t), y(s.q95))).collect();
    band.extend(rows.iter().rev().map(|s| format!("{:.2},{:.2}", x(s.t), y(s.q05))));
    let mean: Vec<String> = rows.iter().map(|s| format!("{:.2},{:.2}", x(s.t), y(s.mean_dev))).collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        out,
        r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##,
        band.join(" ")
    );
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="1.5"/>"##,
        mean.join(" ")
    );
    let (x0, y0, x1, y1) = (pad, h - pad, w - pad, pad);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{x1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">t = {t_max}</text>"#,
        y0 + 16.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{y1}" font-family="sans-serif" font-size="11" text-anchor="end">{y_max:.3}</text>"#,
        x0 - 4.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">mean |u - u*| with 5-95% band</text>"#,
        x0 + 8.0,
        y1 + 14.0
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::sim::ensemble::{run_ensemble, SimOptions};
    use nalgebra::{DMatrix, DVector};

    fn ensemble() -> PathEnsemble {
        let m = ModelSpec::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let mut opts = SimOptions::new(vec![1.5], 3, 0.5, 7);
        opts.record_interval = Some(0.1);
        run_ensemble(&m, None, &opts).unwrap()
    }

    #[test]
    fn timeseries_layout() {
        let ens = ensemble();
        let csv = render_timeseries_csv(&ens, 0, &["seed 7".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed 7");
        assert_eq!(lines[1], "t,u_1");
        assert_eq!(lines.len(), 2 + ens.times.len());
        assert!(lines[2].starts_with("0,1.5"));
    }

    #[test]
    fn summary_layout() {
        let ens = ensemble();
        let csv = render_summary_csv(&ens, &[]);
        let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body[0], "t,alive,mean_dev,q05,q50,q95,mean_V");
        assert_eq!(body.len(), 1 + ens.summary.len());
        assert!(body[1].ends_with(','));
    }

    #[test]
    fn svg_is_standalone() {
        let svg = render_svg(&ensemble(), "a < b");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
    }
}
