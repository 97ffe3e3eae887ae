//! Minimal SVG line charts: axes, ticks, grid, a few polylines, a legend.
//! Enough for a report; nothing interactive.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
/// Points per polyline beyond which the series is strided down; full
/// resolution buys nothing at screen scale and bloats the file.
const MAX_POINTS: usize = 2000;

pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    path: &Path,
) -> io::Result<()> {
    let mut xr = Range::empty();
    let mut yr = Range::empty();
    for s in series {
        for (&x, &y) in s.x.iter().zip(s.y) {
            if x.is_finite() && y.is_finite() {
                xr.add(x);
                yr.add(y);
            }
        }
    }
    if !xr.valid() || !yr.valid() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "nothing finite to plot",
        ));
    }
    yr.pad(0.05);

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - xr.lo) / xr.span() * plot_w;
    let sy = |y: f64| MARGIN_T + (yr.hi - y) / yr.span() * plot_h;

    let mut out = String::with_capacity(32 * 1024);
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );

    for (value, frac) in ticks(&xr) {
        let x = MARGIN_L + frac * plot_w;
        let _ = write!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{MARGIN_T}\" x2=\"{x:.1}\" y2=\"{:.1}\" \
             stroke=\"#ddd\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 18.0,
            fmt_tick(value)
        );
    }
    for (value, frac) in ticks(&yr) {
        let y = MARGIN_T + (1.0 - frac) * plot_h;
        let _ = write!(
            out,
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"#ddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            MARGIN_L + plot_w,
            MARGIN_L - 8.0,
            y + 4.0,
            fmt_tick(value)
        );
    }
    let _ = write!(
        out,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" \
         fill=\"none\" stroke=\"#444\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let stride = (s.x.len() / MAX_POINTS).max(1);
        let mut points = String::new();
        for (j, (&x, &y)) in s.x.iter().zip(s.y).enumerate() {
            let keep = j % stride == 0 || j + 1 == s.x.len();
            if keep && x.is_finite() && y.is_finite() {
                let _ = write!(points, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = write!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            points.trim_end()
        );
        let ly = MARGIN_T + 16.0 + 18.0 * i as f64;
        let _ = write!(
            out,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            MARGIN_L + plot_w - 150.0,
            MARGIN_L + plot_w - 120.0,
            MARGIN_L + plot_w - 112.0,
            ly + 4.0,
            escape(s.label)
        );
    }

    out.push_str("</svg>\n");
    fs::write(path, out)
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn empty() -> Self {
        Range {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }
    fn add(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }
    fn valid(&self) -> bool {
        self.lo <= self.hi
    }
    fn pad(&mut self, frac: f64) {
        let pad = (self.hi - self.lo) * frac;
        self.lo -= pad;
        self.hi += pad;
    }
    fn span(&self) -> f64 {
        // A flat series still needs a nonzero scale.
        let s = self.hi - self.lo;
        if s > 0.0 {
            s
        } else {
            self.lo.abs().max(1.0)
        }
    }
}

/// Six evenly spaced ticks as (value, fraction along the axis).
fn ticks(r: &Range) -> Vec<(f64, f64)> {
    (0..=5)
        .map(|i| {
            let f = i as f64 / 5.0;
            (r.lo + f * r.span(), f)
        })
        .collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs();
    if (0.01..10000.0).contains(&mag) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_well_formed_chart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        let x: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        line_chart(
            "demo",
            "t (s)",
            "y",
            &[Series {
                label: "sin",
                x: &x,
                y: &y,
            }],
            &path,
        )
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        assert!(text.ends_with("</svg>\n"));
    }

    #[test]
    fn rejects_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(line_chart("x", "x", "y", &[], &dir.path().join("x.svg")).is_err());
    }
}
