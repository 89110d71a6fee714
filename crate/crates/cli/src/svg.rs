//! Hand-rolled SVG emission for the log-log scatter/mean/fit plots. No
//! plotting dependency: the figures are scatter plus lines on log axes only.

use anyhow::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogBase {
    Two,
    Ten,
}

impl LogBase {
    fn log(&self, v: f64) -> f64 {
        match self {
            LogBase::Two => v.log2(),
            LogBase::Ten => v.log10(),
        }
    }

    fn label(&self, k: i64) -> String {
        match self {
            LogBase::Two => format!("2^{k}"),
            LogBase::Ten => format!("1e{k}"),
        }
    }
}

pub struct PlotSpec<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub x_base: LogBase,
    pub y_base: LogBase,
    /// Individual replicate values.
    pub scatter: &'a [(f64, f64)],
    /// Per-grid-point means, drawn as a polyline.
    pub means: &'a [(f64, f64)],
    /// Fitted line in log-log coordinates (slope, intercept base-2), drawn
    /// across the mean range with its slope annotated.
    pub fit: Option<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;

/// Renders the plot to an SVG string. Fails on empty series or nonpositive
/// data (log axes).
pub fn render(spec: &PlotSpec) -> Result<String> {
    if spec.means.is_empty() && spec.scatter.is_empty() {
        bail!("cannot plot an empty series");
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for &(x, y) in spec.scatter.iter().chain(spec.means) {
        if x <= 0.0 || y <= 0.0 {
            bail!("log axes need positive data, got ({x}, {y})");
        }
        xs.push(spec.x_base.log(x));
        ys.push(spec.y_base.log(y));
    }
    let (x_lo, x_hi) = padded_range(&xs);
    let (y_lo, y_hi) = padded_range(&ys);
    let px = |lx: f64| ML + (lx - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let py = |ly: f64| H - MB - (ly - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        xml_escape(spec.title)
    ));

    // Axes.
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB
    ));
    s.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB
    ));

    // Integer-power ticks.
    for k in (x_lo.ceil() as i64)..=(x_hi.floor() as i64) {
        let x = px(k as f64);
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>\n",
            H - MB,
            H - MB + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            H - MB + 18.0,
            spec.x_base.label(k)
        ));
    }
    for k in (y_lo.ceil() as i64)..=(y_hi.floor() as i64) {
        let y = py(k as f64);
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{ML}\" y2=\"{y:.2}\" stroke=\"black\"/>\n",
            ML - 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{y:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            ML - 8.0,
            spec.y_base.label(k)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0,
        xml_escape(spec.x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"monospace\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        xml_escape(spec.y_label)
    ));

    // Scatter.
    for &(x, y) in spec.scatter {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"steelblue\" fill-opacity=\"0.55\"/>\n",
            px(spec.x_base.log(x)),
            py(spec.y_base.log(y))
        ));
    }

    // Mean polyline.
    if !spec.means.is_empty() {
        let pts: Vec<String> = spec
            .means
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(spec.x_base.log(x)), py(spec.y_base.log(y))))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"1.8\"/>\n",
            pts.join(" ")
        ));
        for &(x, y) in spec.means {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.2\" fill=\"crimson\"/>\n",
                px(spec.x_base.log(x)),
                py(spec.y_base.log(y))
            ));
        }
    }

    // Fitted line (slope/intercept are in base-2 logs).
    if let Some((slope, intercept)) = spec.fit {
        if let (Some(first), Some(last)) = (spec.means.first(), spec.means.last()) {
            let line = |x: f64| -> (f64, f64) {
                let ly2 = intercept + slope * x.log2();
                let y = 2f64.powf(ly2);
                (px(spec.x_base.log(x)), py(spec.y_base.log(y)))
            };
            let (x1, y1) = line(first.0);
            let (x2, y2) = line(last.0);
            s.push_str(&format!(
                "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"black\" stroke-dasharray=\"6 3\" stroke-width=\"1.4\"/>\n"
            ));
            s.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"13\">slope {slope:.3}</text>\n",
                (x1 + x2) / 2.0 + 8.0,
                (y1 + y2) / 2.0 - 8.0
            ));
        }
    }

    s.push_str("</svg>\n");
    Ok(s)
}

fn padded_range(vals: &[f64]) -> (f64, f64) {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.08).max(0.25);
    (lo - pad, hi + pad)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
