//! Minimal static SVG figures.

use std::f64::consts::PI;
use std::fmt::Write;

use ionlock::estimate::{CellPhase, ContrastPoint};
use ionlock::experiments::{ContrastTheoryPoint, PhaseMapPoint};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + (1.0 - (y - self.y.0) / (self.y.1 - self.y.0)) * self.height
    }

    fn axes(&self, svg: &mut String, xlabel: &str, ylabel: &str, title: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(
            svg,
            "<rect x=\"{l:.1}\" y=\"{t:.1}\" width=\"{w:.1}\" height=\"{h:.1}\" fill=\"none\" stroke=\"black\"/>"
        );
        for i in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let (xp, yp) = (self.px(fx), self.py(fy));
            let _ = writeln!(
                svg,
                "<line x1=\"{xp:.1}\" y1=\"{:.1}\" x2=\"{xp:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\
                 <text x=\"{xp:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
                t + h,
                t + h + 4.0,
                t + h + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{yp:.1}\" x2=\"{l:.1}\" y2=\"{yp:.1}\" stroke=\"black\"/>\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
                l - 4.0,
                l - 6.0,
                yp + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{xlabel}</text>",
            l + w / 2.0,
            t + h + 32.0
        );
        let _ = writeln!(
            svg,
            "<text transform=\"translate({:.1},{:.1}) rotate(-90)\" text-anchor=\"middle\" {FONT}>{ylabel}</text>",
            l - 40.0,
            t + h / 2.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT} font-weight=\"bold\">{title}</text>",
            l + w / 2.0,
            t - 8.0
        );
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

fn open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Cyclic colour for a wrapped phase.
fn phase_colour(phase: f64) -> String {
    let hue = ((phase + PI) / (2.0 * PI) * 360.0).rem_euclid(360.0);
    format!("hsl({hue:.0},70%,50%)")
}

fn edges(centres: &[f64]) -> Vec<f64> {
    let n = centres.len();
    if n == 1 {
        return vec![centres[0] - 0.5, centres[0] + 0.5];
    }
    let mut e = Vec::with_capacity(n + 1);
    e.push(centres[0] - 0.5 * (centres[1] - centres[0]));
    for w in centres.windows(2) {
        e.push(0.5 * (w[0] + w[1]));
    }
    e.push(centres[n - 1] + 0.5 * (centres[n - 1] - centres[n - 2]));
    e
}

/// Theory and measured wrapped phase maps side by side, τ in µs against ξ.
pub fn phase_map_svg(
    tau_grid: &[f64],
    xi_grid: &[f64],
    theory: &[PhaseMapPoint],
    cells: &[CellPhase],
) -> String {
    let tau_us: Vec<f64> = tau_grid.iter().map(|t| t * 1e6).collect();
    let te = edges(&tau_us);
    let xe = edges(xi_grid);
    let mut svg = open(760.0, 360.0);
    let panels: [(&str, Vec<f64>); 2] = [
        ("model", theory.iter().map(|p| p.phase).collect()),
        ("simulated fit", cells.iter().map(|c| c.phase).collect()),
    ];
    for (k, (title, phases)) in panels.iter().enumerate() {
        let frame = Frame {
            left: 70.0 + 360.0 * k as f64,
            top: 30.0,
            width: 280.0,
            height: 270.0,
            x: (te[0], te[te.len() - 1]),
            y: (xe[0], xe[xe.len() - 1]),
        };
        for (i, _) in tau_grid.iter().enumerate() {
            for (j, _) in xi_grid.iter().enumerate() {
                let phase = phases[i * xi_grid.len() + j];
                let (x0, x1) = (frame.px(te[i]), frame.px(te[i + 1]));
                let (y0, y1) = (frame.py(xe[j + 1]), frame.py(xe[j]));
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                    x1 - x0,
                    y1 - y0,
                    phase_colour(phase)
                );
            }
        }
        frame.axes(
            &mut svg,
            "τ (µs)",
            "ξ (rad)",
            &format!("lock-in phase, {title}"),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Pulse count, measured ratios, true-parameter curve, fitted curve.
pub type ContrastPanel = (
    u32,
    Vec<ContrastPoint>,
    Vec<ContrastTheoryPoint>,
    Vec<ContrastTheoryPoint>,
);

/// One panel per pulse count: measured contrast ratios with error bars, the
/// true-parameter curve and the fitted curve.
pub fn contrast_svg(panels: &[ContrastPanel]) -> String {
    let height = 60.0 + 260.0 * panels.len() as f64;
    let mut svg = open(560.0, height);
    for (k, (n, points, theory, model)) in panels.iter().enumerate() {
        let taus = theory
            .iter()
            .map(|p| p.tau * 1e6)
            .chain(points.iter().map(|p| p.tau * 1e6));
        let (lo, hi) = taus.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| {
            (a.min(t), b.max(t))
        });
        let frame = Frame {
            left: 70.0,
            top: 30.0 + 260.0 * k as f64,
            width: 460.0,
            height: 200.0,
            x: (lo, hi),
            y: (-0.6, 1.2),
        };
        let zero = frame.py(0.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{zero:.1}\" x2=\"{:.1}\" y2=\"{zero:.1}\" stroke=\"#bbb\"/>",
            frame.px(lo),
            frame.px(hi)
        );
        for (curve, style) in [
            (theory, "stroke=\"black\""),
            (model, "stroke=\"#d62728\" stroke-dasharray=\"5,3\""),
        ] {
            let path: Vec<String> = curve
                .iter()
                .map(|p| format!("{:.2},{:.2}", frame.px(p.tau * 1e6), frame.py(p.contrast)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline fill=\"none\" {style} points=\"{}\"/>",
                path.join(" ")
            );
        }
        for p in points {
            let x = frame.px(p.tau * 1e6);
            let top = frame.py((p.ratio + p.sigma).min(frame.y.1));
            let bottom = frame.py((p.ratio - p.sigma).max(frame.y.0));
            let y = frame.py(p.ratio.clamp(frame.y.0, frame.y.1));
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.2}\" y1=\"{top:.2}\" x2=\"{x:.2}\" y2=\"{bottom:.2}\" stroke=\"#1f77b4\"/>\
                 <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"#1f77b4\"/>"
            );
        }
        frame.axes(
            &mut svg,
            "τ (µs)",
            "contrast ratio",
            &format!("free-running, n = {n}"),
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_bracket_centres() {
        assert_eq!(edges(&[1.0, 2.0, 4.0]), vec![0.5, 1.5, 3.0, 5.0]);
        assert_eq!(edges(&[3.0]), vec![2.5, 3.5]);
    }

    #[test]
    fn phase_colours_are_cyclic() {
        assert_eq!(phase_colour(-PI), phase_colour(PI));
    }
}
