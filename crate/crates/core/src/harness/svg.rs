//! Minimal self-contained SVG line charts.

use std::fmt::Write;

use crate::error::{invalid, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    /// Drawn bold (mean curves); otherwise thin and translucent.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SvgStyle {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Dashed horizontal line at this height, with its legend label.
    pub reference: Option<(f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// One polyline per series, a legend, axes with linear ticks and an
/// optional dashed reference line. Output depends only on the input.
pub fn emit_svg(series: &[Series], style: &SvgStyle) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(invalid("SVG needs at least one non-empty curve"));
    }
    let all = series.iter().flat_map(|s| s.points.iter());
    if all.clone().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(invalid("SVG curves must be finite"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some((r, _)) = &style.reference {
        y0 = y0.min(*r);
        y1 = y1.max(*r);
    }
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { padded_range(x0, x1) };
    let (y0, y1) = padded_range(y0, y1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&style.title)
    );
    // axes
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#, TOP + plot_h);
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 19.0,
            tick_label(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{LEFT}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&style.y_label)
    );
    if let Some((r, _)) = &style.reference {
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{:.2}" x2="{:.1}" y2="{:.2}" stroke="#555" stroke-dasharray="6 4"/>"##,
            sy(*r),
            LEFT + plot_w,
            sy(*r)
        );
    }
    // thin curves first so the bold ones stay on top
    let order = series.iter().filter(|s| !s.bold).chain(series.iter().filter(|s| s.bold));
    for s in order {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let (w, opacity) = if s.bold { (2.5, 1.0) } else { (1.0, 0.55) };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="{w}" stroke-opacity="{opacity}" points="{}"/>"#,
            escape(&s.color),
            pts.join(" ")
        );
    }
    // legend: one entry per distinct label, in first-seen order
    let mut seen: Vec<(&str, &str, bool)> = Vec::new();
    for s in series {
        if !seen.iter().any(|(l, _, _)| *l == s.label) {
            seen.push((&s.label, &s.color, s.bold));
        }
    }
    let lx = LEFT + plot_w + 16.0;
    let mut ly = TOP + 8.0;
    for (label, color, bold) in seen {
        let w = if bold { 2.5 } else { 1.0 };
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{}" stroke-width="{w}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 22.0,
            escape(color),
            lx + 28.0,
            ly + 4.0,
            escape(label)
        );
        ly += 18.0;
    }
    if let Some((_, label)) = &style.reference {
        let _ = writeln!(
            out,
            r##"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="#555" stroke-dasharray="6 4"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
