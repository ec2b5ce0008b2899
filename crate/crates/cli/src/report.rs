//! Human-readable summary and the isometry scatter plot of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gappy_core::evaluation::metrics::{read_metrics_csv, read_scatter_csv};
use gappy_core::evaluation::MetricRow;

use crate::pipeline::{scatter_file, Check, CHECKS, METRICS, SCATTER_SVG, SUMMARY};
use crate::CliError;

/// Scatter points drawn per series.
pub const MAX_PLOTTED: usize = 5000;

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub fn write_checks(path: &Path, checks: &[Check]) -> Result<(), CliError> {
    let mut out = String::from("name,value,limit,passed\n");
    for c in checks {
        let _ = writeln!(out, "{},{},{},{}", c.name, c.value, c.limit, c.passed);
    }
    fs::write(path, out).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_checks(path: &Path) -> Vec<Check> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            Some(Check {
                name: f.first()?.to_string(),
                value: f.get(1)?.parse().ok()?,
                limit: f.get(2)?.parse().ok()?,
                passed: f.get(3)?.parse().ok()?,
            })
        })
        .collect()
}

/// Reads the metrics and scatter CSVs of `dir` and writes the SVG scatter
/// plot and the text summary. Returns the summary text.
pub fn emit_report(dir: &Path) -> Result<String, CliError> {
    let metrics_path = dir.join(METRICS);
    if !metrics_path.exists() {
        return Err(CliError::MissingArtifacts(vec![METRICS.to_string()]));
    }
    let file = fs::File::open(&metrics_path).map_err(|source| CliError::Io {
        path: metrics_path.clone(),
        source,
    })?;
    let rows = read_metrics_csv(file)?;
    let missing: Vec<String> = rows
        .iter()
        .map(|r| scatter_file(&r.method))
        .filter(|f| !dir.join(f).exists())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }
    let mut series = Vec::new();
    for r in &rows {
        let path = dir.join(scatter_file(&r.method));
        let file = fs::File::open(&path).map_err(|source| CliError::Io { path, source })?;
        series.push((r.method.clone(), read_scatter_csv(file)?));
    }
    let svg = scatter_svg(&series);
    let svg_path = dir.join(SCATTER_SVG);
    fs::write(&svg_path, svg).map_err(|source| CliError::Io { path: svg_path, source })?;

    let summary = summary_text(&rows, &read_checks(&dir.join(CHECKS)));
    let summary_path = dir.join(SUMMARY);
    fs::write(&summary_path, &summary).map_err(|source| CliError::Io {
        path: summary_path,
        source,
    })?;
    Ok(summary)
}

fn summary_text(rows: &[MetricRow], checks: &[Check]) -> String {
    let mut out = String::new();
    if let Some(r) = rows.first() {
        let _ = writeln!(out, "scenario {} seed {}", r.scenario, r.seed);
    }
    let _ = writeln!(out, "{:<12} {:>12} {:>14} {:>12} {:>9}", "method", "rmse", "relative_rmse", "max_error", "pairs");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>12.6} {:>13.2}% {:>12.6} {:>9}",
            r.method,
            r.rmse,
            100.0 * r.relative_rmse,
            r.max_error,
            r.n_pairs
        );
    }
    if !checks.is_empty() {
        out.push('\n');
        for c in checks {
            let _ = writeln!(
                out,
                "{} {}: {:.6} (limit {})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            );
        }
    }
    out
}

/// Latent (x) against embedded (y) pair distances, one colour per series,
/// with the identity line.
pub fn scatter_svg(series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, margin) = (640.0, 640.0, 60.0);
    let max = series
        .iter()
        .flat_map(|(_, p)| p.iter())
        .flat_map(|&(a, b)| [a, b])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let max = if max > 0.0 { max * 1.05 } else { 1.0 };
    let plot = w - 2.0 * margin;
    let sx = |v: f64| margin + plot * v / max;
    let sy = |v: f64| h - margin - plot * v / max;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    // axes and ticks
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = margin,
        t = margin,
        b = h - margin,
        r = w - margin
    );
    for i in 0..=5 {
        let v = max * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.3}</text>"#,
            sx(v),
            h - margin + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            margin - 6.0,
            sy(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">latent distance</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">embedded distance</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        sx(0.0),
        sy(0.0),
        sx(max),
        sy(max)
    );
    for (n, (name, pairs)) in series.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let stride = pairs.len().div_ceil(MAX_PLOTTED).max(1);
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.5" class="series" data-name="{name}">"#);
        for &(a, b) in pairs.iter().step_by(stride).filter(|(a, b)| a.is_finite() && b.is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, sx(a), sy(b));
        }
        s.push_str("</g>\n");
        let ly = margin + 10.0 + 18.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{ly:.1}" r="5" fill="{color}"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            margin + 15.0,
            margin + 25.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
