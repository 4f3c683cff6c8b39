//! Static SVG chart of evaluation success rate per epoch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::train::{read_metrics, MetricsRow};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders the series as SVG text. Each series is `(label, rows)`.
pub fn render_svg(series: &[(String, Vec<MetricsRow>)]) -> String {
    let max_epoch = series
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.epoch))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |e: f64| LEFT + plot_w * e / max_epoch;
    let y = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    // axes
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    let _ = writeln!(s, r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + plot_h);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="#dddddd"/><text x="{2}" y="{3}" text-anchor="end">{v:.1}</text>"##,
            y(v),
            LEFT + plot_w,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let ticks = 5usize.min(max_epoch as usize);
    for i in 0..=ticks {
        let e = (max_epoch * i as f64 / ticks as f64).round();
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{e}</text>"#,
            x(e),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">eval success rate</text>"#,
        TOP + plot_h / 2.0
    );

    for (i, (label, rows)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", x(r.epoch as f64), y(r.eval_success_rate)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            escape(label),
            points.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads each metrics CSV and writes one chart with a polyline per file,
/// labeled by file stem.
pub fn emit_plot(metric_csv_paths: &[PathBuf], out_path: &Path) -> Result<()> {
    if metric_csv_paths.is_empty() {
        return Err(Error::Config("plot needs at least one metrics file".into()));
    }
    let mut series = Vec::with_capacity(metric_csv_paths.len());
    for p in metric_csv_paths {
        let rows = read_metrics(p)?;
        if rows.is_empty() {
            return Err(Error::Format { path: p.clone(), message: "no data rows".into() });
        }
        series.push((stem(p), rows));
    }
    fs::write(out_path, render_svg(&series))?;
    Ok(())
}
