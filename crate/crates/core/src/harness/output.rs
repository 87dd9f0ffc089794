//! Result files: per-run CSV, per-point summary, an SVG plot and a JSON
//! sidecar with the details the CSV leaves out.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{aggregate, Algorithm, HarnessError, Result, ResultTable, RunRow, SweepAxis};

pub const CSV_HEADER: [&str; 6] = [
    "axis",
    "axis_value",
    "seed",
    "algorithm",
    "avg_cost",
    "runtime_s",
];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes one line per run. Failed runs leave `avg_cost` empty.
pub fn emit_csv(table: &ResultTable, path: &Path, record_runtime: bool) -> Result<()> {
    if table.rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for r in &table.rows {
        let runtime = if record_runtime { r.wall_time_s } else { 0.0 };
        w.write_record([
            r.axis.name().to_string(),
            r.axis_value.to_string(),
            r.seed.to_string(),
            r.algorithm.name().to_string(),
            r.avg_cost.map(|c| c.to_string()).unwrap_or_default(),
            runtime.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// One parsed line of an emitted CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub seed: usize,
    pub algorithm: Algorithm,
    pub avg_cost: Option<f64>,
    pub runtime_s: f64,
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let fail = |message: String| HarnessError::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(fail(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let at = |e: String| fail(format!("row {}: {e}", line + 1));
        let num = |s: &str| s.parse::<f64>().map_err(|e| at(format!("`{s}`: {e}")));
        rows.push(CsvRow {
            axis: rec[0].parse().map_err(at)?,
            axis_value: num(&rec[1])?,
            seed: rec[2].parse().map_err(|e| at(format!("seed: {e}")))?,
            algorithm: rec[3].parse().map_err(at)?,
            avg_cost: if rec[4].is_empty() {
                None
            } else {
                Some(num(&rec[4])?)
            },
            runtime_s: num(&rec[5])?,
        });
    }
    Ok(rows)
}

/// Mean and standard error per (axis value, algorithm).
pub fn emit_summary(table: &ResultTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record([
        "axis",
        "axis_value",
        "algorithm",
        "runs",
        "mean_cost",
        "stderr",
    ])
    .map_err(csv_err(path))?;
    for a in aggregate(&table.rows) {
        w.write_record([
            table.axis.name().to_string(),
            a.axis_value.to_string(),
            a.algorithm.name().to_string(),
            a.count.to_string(),
            a.mean.to_string(),
            a.stderr.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct RunsFile<'a> {
    name: &'a str,
    axis: SweepAxis,
    runs: &'a [RunRow],
}

/// Full run records, including trace checksums, violations and errors.
pub fn emit_runs(table: &ResultTable, path: &Path) -> Result<()> {
    let file = RunsFile {
        name: &table.name,
        axis: table.axis,
        runs: &table.rows,
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn emit_plot(table: &ResultTable, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(table)).map_err(io_err(path))
}

const COLORS: [(Algorithm, &str); 4] = [
    (Algorithm::Twet, "#1f77b4"),
    (Algorithm::Mtep, "#d62728"),
    (Algorithm::Heu, "#2ca02c"),
    (Algorithm::Offline, "#7f7f7f"),
];

/// Mean cost per algorithm against the axis, with a shaded band of one
/// standard error.
pub fn render_svg(table: &ResultTable) -> String {
    let (width, height) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 130.0, 30.0, 55.0);
    let agg = aggregate(&table.rows);
    let xs = agg.iter().map(|a| a.axis_value);
    let ys = agg
        .iter()
        .flat_map(|a| [a.mean - a.stderr, a.mean + a.stderr]);
    let (x0, x1) = span(xs);
    let (y0, y1) = span(ys);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (width - left - right);
    let py = |y: f64| height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(&table.name)
    );
    let (ax_l, ax_r, ax_t, ax_b) = (left, width - right, top, height - bottom);
    let _ = writeln!(
        s,
        r#"<path d="M{ax_l} {ax_t} L{ax_l} {ax_b} L{ax_r} {ax_b}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            ax_b + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ax_l - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (ax_l + ax_r) / 2.0,
        height - 12.0,
        escape(table.axis.label())
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">Average cost per slot ($)</text>"#,
        (ax_t + ax_b) / 2.0
    );

    let mut legend = 0;
    for (alg, color) in COLORS {
        let pts: Vec<_> = agg.iter().filter(|a| a.algorithm == alg).collect();
        if pts.is_empty() {
            continue;
        }
        let upper = pts
            .iter()
            .map(|a| (px(a.axis_value), py(a.mean + a.stderr)));
        let lower = pts
            .iter()
            .rev()
            .map(|a| (px(a.axis_value), py(a.mean - a.stderr)));
        let band: Vec<String> = upper
            .chain(lower)
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|a| format!("{:.1},{:.1}", px(a.axis_value), py(a.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for a in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                px(a.axis_value),
                py(a.mean)
            );
        }
        let ly = top + 10.0 + 20.0 * legend as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            ax_r + 15.0,
            ax_r + 40.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            ax_r + 46.0,
            ly + 4.0,
            alg.name().to_uppercase()
        );
        legend += 1;
    }
    s.push_str("</svg>\n");
    s
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
