//! CSV and SVG emission for loss curves and steering traces.

use crate::error::Result;
use std::fmt::Write as _;
use std::path::Path;

/// One named series sharing the x axis.
pub struct Series<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// Write series as CSV: header row, then one row per x position. Ragged
/// series leave blanks.
pub fn write_csv(path: &Path, x_name: &str, xs: &[f64], series: &[Series<'_>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(x_name);
    for s in series {
        out.push(',');
        out.push_str(s.name);
    }
    out.push('\n');
    for (i, x) in xs.iter().enumerate() {
        let _ = write!(out, "{x:.9}");
        for s in series {
            match s.values.get(i) {
                Some(v) => {
                    let _ = write!(out, ",{v:.9e}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Minimal well-formed SVG line plot with axes, tick labels, a legend and an
/// optional annotation line (used for MSE callouts).
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    xs: &[f64],
    series: &[Series<'_>],
    annotation: Option<&str>,
) -> String {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (62.0, 16.0, 42.0, 48.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let finite = |v: &&f64| v.is_finite();
    let mut x_min = xs.iter().filter(finite).cloned().fold(f64::MAX, f64::min);
    let mut x_max = xs.iter().filter(finite).cloned().fold(f64::MIN, f64::max);
    let mut y_min = f64::MAX;
    let mut y_max = f64::MIN;
    for s in series {
        for &v in s.values.iter().filter(|v| v.is_finite()) {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !x_min.is_finite() || x_min == x_max {
        x_min -= 0.5;
        x_max = x_min + 1.0;
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if y_min == y_max {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;

    let tx = |x: f64| ml + (x - x_min) / (x_max - x_min) * plot_w;
    let ty = |y: f64| mt + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        xml_escape(title)
    );

    // Axes and ticks.
    let _ = writeln!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#333\"/>"
    );
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#444\">{}</text>",
            tx(fx),
            h - mb + 16.0,
            format_tick(fx)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" fill=\"#444\">{}</text>",
            ml - 6.0,
            ty(fy) + 4.0,
            format_tick(fy)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{ml}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"#ddd\"/>",
            ty(fy),
            w - mr
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">{}</text>",
        ml + plot_w / 2.0,
        h - 12.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.0})\">{}</text>",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0,
        xml_escape(y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut points = String::new();
        for (i, (&x, &y)) in xs.iter().zip(s.values).enumerate() {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            if i > 0 {
                points.push(' ');
            }
            let _ = write!(points, "{:.1},{:.1}", tx(x), ty(y));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{points}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>"
        );
        let ly = mt + 14.0 + 16.0 * si as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"2\"/><text x=\"{2:.1}\" y=\"{3:.1}\" fill=\"#222\">{4}</text>",
            ml + plot_w - 150.0,
            ml + plot_w - 126.0,
            ml + plot_w - 120.0,
            ly + 4.0,
            xml_escape(s.name)
        );
    }
    if let Some(note) = annotation {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#666\">{}</text>",
            ml + 8.0,
            mt + plot_h - 8.0,
            xml_escape(note)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
