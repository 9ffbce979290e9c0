//! Minimal SVG line plots of a run: states, inputs, and `V` against the
//! certified envelope.

use std::fmt::Write;

use crate::dynamics::ClfCertificate;
use crate::sim::Trajectory;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 200.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 40.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Series<'a> {
    label: String,
    color: &'a str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn thin<T: Copy>(xs: &[T]) -> Vec<T> {
    if xs.len() <= MAX_POINTS {
        return xs.to_vec();
    }
    let step = xs.len().div_ceil(MAX_POINTS);
    let mut out: Vec<T> = xs.iter().step_by(step).copied().collect();
    out.push(*xs.last().unwrap());
    out
}

fn panel(svg: &mut String, top: f64, title: &str, t_range: (f64, f64), series: &[Series]) {
    let (t0, t1) = t_range;
    let finite = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        lo -= 0.5;
        hi += 0.5;
    }
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let sx = |t: f64| MARGIN_L + (t - t0) / (t1 - t0).max(1e-300) * plot_w;
    let sy = |v: f64| top + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(svg, r#"<text x="{MARGIN_L}" y="{:.1}" font-size="13">{title}</text>"#, top - 8.0);
    for (v, y) in [(hi, top + 10.0), (lo, top + PANEL_H)] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{y:.1}" font-size="10" text-anchor="end">{v:.3e}</text>"#, MARGIN_L - 4.0);
    }
    if lo < 0.0 && hi > 0.0 {
        let y0 = sy(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{y0:.2}" x2="{:.2}" y2="{y0:.2}" stroke="#bbb" stroke-width="0.5"/>"##,
            MARGIN_L + plot_w
        );
    }
    for (i, s) in series.iter().enumerate() {
        let mut pts = String::new();
        for &(t, v) in &thin(&s.points) {
            if v.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", sx(t), sy(v.clamp(lo, hi)));
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"{dash}/>"#,
            pts.trim_end(),
            s.color
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" fill="{}">{}</text>"#,
            MARGIN_L + plot_w - 110.0,
            top + 16.0 + 13.0 * i as f64,
            s.color,
            s.label
        );
    }
}

/// Three panels sharing the time axis.
pub fn render_trajectory(traj: &Trajectory, cert: &dyn ClfCertificate) -> String {
    let t0 = traj.samples.first().map_or(0.0, |s| s.t);
    let t1 = traj.samples.last().map_or(1.0, |s| s.t).max(t0 + 1e-12);
    let d = traj.samples.first().map_or(0, |s| s.x.len());
    let m = traj.samples.first().map_or(0, |s| s.u.len());
    let component = |f: &dyn Fn(&crate::sim::Sample) -> f64| traj.samples.iter().map(|s| (s.t, f(s))).collect();
    let xs: Vec<Series> = (0..d)
        .map(|i| Series {
            label: format!("x{}", i + 1),
            color: COLORS[i % COLORS.len()],
            dashed: false,
            points: component(&|s| s.x[i]),
        })
        .collect();
    let us: Vec<Series> = (0..m)
        .map(|i| Series {
            label: format!("u{}", i + 1),
            color: COLORS[i % COLORS.len()],
            dashed: false,
            points: component(&|s| s.u[i]),
        })
        .collect();
    let v0 = traj.v0();
    let map = cert.energy_map();
    let bound = traj
        .samples
        .iter()
        .map(|s| (s.t, map.convergence_bound(traj.sigma, v0, s.t - t0).unwrap_or(f64::NAN)))
        .collect();
    let vs = vec![
        Series { label: "V".into(), color: COLORS[0], dashed: false, points: component(&|s| s.v) },
        Series { label: "bound".into(), color: COLORS[1], dashed: true, points: bound },
    ];
    let height = MARGIN_T + 3.0 * PANEL_H + 2.0 * GAP + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let mut top = MARGIN_T;
    for (title, series) in [("state", &xs), ("input", &us), ("V and certified bound", &vs)] {
        panel(&mut svg, top, title, (t0, t1), series);
        top += PANEL_H + GAP;
    }
    let axis_y = top - GAP + 16.0;
    let _ = writeln!(svg, r#"<text x="{MARGIN_L}" y="{axis_y:.1}" font-size="10">t = {t0}</text>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{axis_y:.1}" font-size="10" text-anchor="end">t = {t1:.4}</text>"#,
        WIDTH - MARGIN_R
    );
    svg.push_str("</svg>\n");
    svg
}
