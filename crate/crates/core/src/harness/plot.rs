//! Static SVG plots of learning curves (mean line with a shaded stderr band).

use std::fmt::Write as _;

use super::record::AggregatePoint;
use crate::permtest::xml_escape;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct BandSeries<'a> {
    pub label: String,
    pub points: &'a [AggregatePoint],
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn band_plot(title: &str, x_label: &str, y_label: &str, series: &[BandSeries]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 180.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x_lo = x_lo.min(p.step as f64);
        x_hi = x_hi.max(p.step as f64);
        y_lo = y_lo.min(p.mean - p.stderr);
        y_hi = y_hi.max(p.mean + p.stderr);
    }
    let (x_lo, x_hi) = if x_lo.is_finite() { (x_lo.min(0.0), x_hi) } else { (0.0, 1.0) };
    let (y_lo, y_hi) = nice_range(y_lo, y_hi);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |x: f64| left + pw * (x - x_lo) / (x_hi - x_lo).max(1e-12);
    let sy = |y: f64| top + ph * (1.0 - (y - y_lo) / (y_hi - y_lo));

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        left + pw / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for i in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.3}</text>",
            sx(fx),
            top + ph + 18.0,
            fx.round(),
            left - 6.0,
            sy(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        left + pw / 2.0,
        h - 12.0,
        xml_escape(x_label),
        top + ph / 2.0,
        top + ph / 2.0,
        xml_escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if s.points.is_empty() {
            continue;
        }
        let upper: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.step as f64), sy(p.mean + p.stderr)))
            .collect();
        let lower: Vec<String> = s
            .points
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", sx(p.step as f64), sy(p.mean - p.stderr)))
            .collect();
        let line: Vec<String> = s
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.step as f64), sy(p.mean)))
            .collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n\
             <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            upper.join(" "),
            lower.join(" "),
            line.join(" ")
        );
        let ly = top + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"14\" height=\"4\" fill=\"{color}\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            w - right + 12.0,
            ly - 4.0,
            w - right + 30.0,
            ly,
            xml_escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
