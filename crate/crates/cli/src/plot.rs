//! SVG sparsification-error plots from a curves CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::report::CURVES_HEADER;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Points of one method on one metric.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub method: String,
    /// `(removed fraction, M_u - M_oracle)`.
    pub points: Vec<(f64, f64)>,
}

/// Series of one metric, methods in order of first appearance.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricPlot {
    pub metric: String,
    pub series: Vec<Series>,
}

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::MalformedCsv {
        path: path.into(),
        line,
        reason: reason.into(),
    }
}

/// 1-based line of the record starting at byte `at`. The reader's own
/// line counter does not advance over blank lines, and record offsets
/// point at any blank lines before the record.
fn line_at(bytes: &[u8], at: u64) -> u64 {
    let mut at = (at as usize).min(bytes.len());
    while at < bytes.len() && matches!(bytes[at], b'\n' | b'\r') {
        at += 1;
    }
    1 + bytes[..at].iter().filter(|&&b| b == b'\n').count() as u64
}

pub fn parse_curves(path: &Path, bytes: &[u8]) -> Result<Vec<MetricPlot>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut plots: Vec<MetricPlot> = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| line_at(bytes, p.byte()));
            malformed(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| line_at(bytes, p.byte()));
        if !saw_header {
            if record.iter().ne(CURVES_HEADER) {
                return Err(malformed(path, line, format!("expected header {}", CURVES_HEADER.join(","))));
            }
            saw_header = true;
            continue;
        }
        if record.len() != CURVES_HEADER.len() {
            return Err(malformed(path, line, format!("expected 5 fields, found {}", record.len())));
        }
        let number = |i: usize| -> Result<f64> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| malformed(path, line, format!("{} is not a number: {:?}", CURVES_HEADER[i], &record[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(malformed(path, line, format!("{} is not finite", CURVES_HEADER[i])))
            }
        };
        let (fraction, value, oracle) = (number(2)?, number(3)?, number(4)?);
        let (method, metric) = (&record[0], &record[1]);
        let plot = match plots.iter().position(|p| p.metric == metric) {
            Some(i) => &mut plots[i],
            None => {
                plots.push(MetricPlot {
                    metric: metric.into(),
                    series: Vec::new(),
                });
                plots.last_mut().unwrap()
            }
        };
        let series = match plot.series.iter().position(|s| s.method == method) {
            Some(i) => &mut plot.series[i],
            None => {
                plot.series.push(Series {
                    method: method.into(),
                    points: Vec::new(),
                });
                plot.series.last_mut().unwrap()
            }
        };
        series.points.push((fraction, value - oracle));
    }
    if !saw_header {
        return Err(malformed(path, 1, "missing header"));
    }
    if plots.is_empty() {
        return Err(malformed(path, 2, "no data rows"));
    }
    Ok(plots)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_svg(plot: &MetricPlot) -> String {
    let all = plot.series.iter().flat_map(|s| s.points.iter());
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for &(_, y) in all {
        lo = lo.min(y);
        hi = hi.max(y);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + x.clamp(0.0, 1.0) * pw;
    let sy = |y: f64| TOP + (hi - y) / (hi - lo) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<polyline points="{:.3},{:.3} {:.3},{:.3}" fill="none" stroke="#999999" stroke-dasharray="4 3"/>"##,
        sx(0.0),
        sy(0.0),
        sx(1.0),
        sy(0.0)
    );
    for k in 0..=4 {
        let x = k as f64 / 4.0;
        let y = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="middle">{x:.2}</text>"#,
            sx(x),
            TOP + ph + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(y) + 4.0,
            format_tick(y)
        );
    }
    let metric = escape(&plot.metric);
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" font-size="13" text-anchor="middle">fraction of pixels removed</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.3}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.3})">sparsification error ({metric})</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="24" font-size="15" text-anchor="middle">Sparsification error: {metric}</text>"#,
        LEFT + pw / 2.0
    );
    for (i, series) in plot.series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.3},{:.3}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.3}" y="{:.3}" width="14" height="4" fill="{colour}"/>"#,
            ly - 2.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" font-size="12">{}</text>"#,
            lx + 20.0,
            ly + 4.0,
            escape(&series.method)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Per-metric file names derived from `out`: `plot.svg` becomes
/// `plot_rmse.svg`, `plot_abs_rel.svg`, and so on.
pub fn output_path(out: &Path, metric: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "plot".into(), |s| s.to_string_lossy().into_owned());
    let safe: String = metric
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    out.with_file_name(format!("{stem}_{safe}.svg"))
}

/// Reads `curves` and writes one SVG per metric. Returns the written paths.
pub fn plot_file(curves: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let plots = parse_curves(curves, &io::read_bytes(curves)?)?;
    let mut written = Vec::with_capacity(plots.len());
    for p in &plots {
        let path = output_path(out, &p.metric);
        io::write_bytes(&path, render_svg(p).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
