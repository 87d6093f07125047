//! Minimal standalone SVG rendering of energy traces.

use std::fmt::Write;

use crate::decay::{DecayFit, EnergyTrace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub log_log: bool,
    pub margin: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle { width: 1000.0, height: 600.0, log_log: false, margin: 50.0 }
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.ln() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Axis { lo, hi, log }
    }

    /// Position in [0, 1]; a degenerate range maps to the middle.
    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.ln() } else { v };
        if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            0.5
        }
    }
}

/// Renders the trace as a polyline, plus the fitted envelope `C t^-delta`
/// over the fit window when `fit` is given. With `log_log`, points with
/// non-positive time or energy are dropped.
pub fn emit_svg(trace: &EnergyTrace, fit: Option<&DecayFit>, style: &PlotStyle) -> Result<String> {
    let points: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.energies)
        .map(|(&t, &e)| (t, e))
        .filter(|&(t, e)| !style.log_log || (t > 0.0 && e > 0.0))
        .collect();
    if points.is_empty() {
        return Err(Error::validation("plot", "nothing to draw: the trace has no plottable points"));
    }
    let mut fit_points = Vec::new();
    if let Some(f) = fit {
        let (a, b) = f.window;
        for k in 0..=64 {
            let t = if style.log_log { a * (b / a).powf(k as f64 / 64.0) } else { a + (b - a) * k as f64 / 64.0 };
            fit_points.push((t, f.envelope(t)));
        }
    }
    let all = || points.iter().chain(&fit_points);
    let xa = Axis::fit(all().map(|p| p.0), style.log_log);
    let ya = Axis::fit(all().map(|p| p.1), style.log_log);
    let m = style.margin;
    let (w, h) = (style.width - 2.0 * m, style.height - 2.0 * m);
    let project = |(t, e): (f64, f64)| (m + w * xa.unit(t), m + h * (1.0 - ya.unit(e)));
    let polyline = |pts: &[(f64, f64)]| {
        pts.iter()
            .map(|&p| {
                let (x, y) = project(p);
                format!("{x:.3},{y:.3}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{m}" y="{m}" width="{w}" height="{h}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let scale = if style.log_log { "log-log" } else { "linear" };
    let _ = writeln!(svg, r#"<text x="{m}" y="{}" font-size="14">energy vs time ({scale})</text>"#, m - 10.0);
    let _ = writeln!(
        svg,
        r#"<polyline class="trace" fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        polyline(&points)
    );
    if let Some(f) = fit {
        let _ = writeln!(
            svg,
            r#"<polyline class="fit" fill="none" stroke="crimson" stroke-dasharray="6 4" stroke-width="1.5" points="{}"/>"#,
            polyline(&fit_points)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="14" fill="crimson">C = {:.4e}, delta = {:.4}</text>"#,
            m + 10.0,
            m + 20.0,
            f.amplitude,
            f.delta
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
