//! Minimal SVG line plots (log-x, error bars). No display dependencies;
//! output is deterministic for identical inputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

pub struct Series {
    pub name: String,
    /// (x, y, stderr) triples.
    pub points: Vec<(f64, f64, f64)>,
}

pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0; // margins
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub fn render(spec: &PlotSpec, series: &[Series]) -> String {
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]))
        .collect();
    let tx = |x: f64| -> f64 {
        if spec.log_x {
            x.max(1e-300).log10()
        } else {
            x
        }
    };
    let (x_min, x_max) = bounds(&xs.iter().map(|&x| tx(x)).collect::<Vec<_>>());
    let (y_min, y_max) = bounds(&ys);
    let px = |x: f64| ML + (tx(x) - x_min) / (x_max - x_min).max(1e-12) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_min) / (y_max - y_min).max(1e-12) * (H - MT - MB);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = write!(svg, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n");
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(&spec.title)
    );

    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR
    );
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    );
    // ticks
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let raw = if spec.log_x { 10f64.powf(fx) } else { fx };
        let x = ML + (fx - x_min) / (x_max - x_min).max(1e-12) * (W - ML - MR);
        let _ = write!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{0}\" x2=\"{x:.1}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{x:.1}\" y=\"{2}\" text-anchor=\"middle\">{3}</text>\n",
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            format_tick(raw)
        );
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = py(fy);
        let _ = write!(
            svg,
            "<line x1=\"{0}\" y1=\"{y:.1}\" x2=\"{ML}\" y2=\"{y:.1}\" stroke=\"black\"/>\n\
             <text x=\"{1}\" y=\"{2:.1}\" text-anchor=\"end\">{3}</text>\n",
            ML - 5.0,
            ML - 8.0,
            y + 4.0,
            format_tick(fy)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 10.0,
        escape(&spec.x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        escape(&spec.y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut path = String::new();
        for (i, &(x, y, _)) in s.points.iter().enumerate() {
            let _ = write!(
                path,
                "{}{:.2},{:.2}",
                if i == 0 { "M" } else { " L" },
                px(x),
                py(y)
            );
        }
        let _ = write!(
            svg,
            "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
        );
        for &(x, y, se) in &s.points {
            let (cx, cy) = (px(x), py(y));
            let _ = write!(
                svg,
                "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"{color}\"/>\n"
            );
            if se > 0.0 {
                let (y0, y1) = (py(y - se), py(y + se));
                let _ = write!(
                    svg,
                    "<line x1=\"{cx:.2}\" y1=\"{y0:.2}\" x2=\"{cx:.2}\" y2=\"{y1:.2}\" \
                     stroke=\"{color}\"/>\n\
                     <line x1=\"{0:.2}\" y1=\"{y0:.2}\" x2=\"{1:.2}\" y2=\"{y0:.2}\" stroke=\"{color}\"/>\n\
                     <line x1=\"{0:.2}\" y1=\"{y1:.2}\" x2=\"{1:.2}\" y2=\"{y1:.2}\" stroke=\"{color}\"/>\n",
                    cx - 3.0,
                    cx + 3.0
                );
            }
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{}</text>\n",
            W - MR - 150.0,
            MT + 15.0 * (si as f64 + 1.0),
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, spec: &PlotSpec, series: &[Series]) -> Result<()> {
    std::fs::write(path, render(spec, series))?;
    Ok(())
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // degenerate single-value plot
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 0.01 && a < 10_000.0 {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_wellformed() {
        let spec = PlotSpec {
            title: "mse vs 1/dFIL".into(),
            x_label: "1/dFIL".into(),
            y_label: "mse".into(),
            log_x: true,
        };
        let series = [Series {
            name: "unbiased".into(),
            points: vec![(0.01, 0.05, 0.01), (0.1, 0.4, 0.05), (1.0, 4.4, 0.2)],
        }];
        let a = render(&spec, &series);
        let b = render(&spec, &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("unbiased"));
    }

    #[test]
    fn degenerate_single_point_still_renders() {
        let spec = PlotSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
        };
        let series = [Series {
            name: "one".into(),
            points: vec![(1.0, 2.0, 0.0)],
        }];
        let svg = render(&spec, &series);
        assert!(svg.contains("circle"));
    }
}
