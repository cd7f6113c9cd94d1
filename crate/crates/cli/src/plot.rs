//! Learning-curve aggregation: per-metric CSVs (one block per run
//! directory) and a static SVG of one metric with an oracle reference line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rebel_core::config::RunConfig;
use rebel_core::trainer::{read_rows, summarize, SummaryRow, CSV_HEADER};
use rebel_core::{Error, Result};

pub struct Group {
    pub name: String,
    pub summary: Vec<SummaryRow>,
}

/// Seed CSVs of one run directory, in seed order.
fn seed_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(u64, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            let name = path.file_name()?.to_str()?;
            let seed = name.strip_prefix("seed_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((seed, path))
        })
        .collect();
    if files.is_empty() {
        return Err(Error::Parse(format!("{}: no seed_*.csv files", dir.display())));
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

pub fn load_group(dir: &Path) -> Result<Group> {
    let per_seed = seed_files(dir)?
        .iter()
        .map(|p| read_rows(p))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&per_seed).map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))?;
    let name = dir
        .file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Group { name, summary })
}

/// Index of `metric` within [`SummaryRow::values`] pairs.
fn metric_index(metric: &str) -> Result<usize> {
    CSV_HEADER[2..]
        .iter()
        .position(|&c| c == metric)
        .ok_or_else(|| Error::Parse(format!("unknown metric `{metric}`; expected one of {:?}", &CSV_HEADER[2..])))
}

fn write_metric_csv(path: &Path, groups: &[Group], idx: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["group", "iter", "mean", "std"]).map_err(Error::from)?;
    for g in groups {
        for row in &g.summary {
            let (m, s) = (row.values[2 * idx], row.values[2 * idx + 1]);
            w.write_record([g.name.clone(), row.iter.to_string(), m.to_string(), s.to_string()])
                .map_err(Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn render_svg(groups: &[Group], idx: usize, metric: &str, oracle: Option<f64>) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 20.0, 50.0);
    let points: Vec<(f64, f64, f64)> = groups
        .iter()
        .flat_map(|g| g.summary.iter())
        .map(|r| (r.iter as f64, r.values[2 * idx], r.values[2 * idx + 1]))
        .filter(|p| p.1.is_finite())
        .collect();
    let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut y_min = points.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let mut y_max = points.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    if let Some(o) = oracle {
        y_min = y_min.min(o);
        y_max = y_max.max(o);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-9 {
        (y_min, y_max) = (y_min - 0.5, y_max + 0.5);
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let sx = |x: f64| left + (x - x_min) / x_span * (w - left - right);
    let sy = |y: f64| top + (y_max - y) / (y_max - y_min) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (sx(x_min), sx(x_min + x_span), sy(y_min), sy(y_max));
    let _ = writeln!(s, r#"<path d="M{x0:.1} {y1:.1} V{y0:.1} H{x1:.1}" stroke="black" fill="none"/>"#);
    for i in 0..=4 {
        let y = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, left - 6.0, sy(y) + 4.0);
    }
    for i in 0..=4 {
        let x = x_min + x_span * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.0}</text>"#, sx(x), y0 + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{metric}</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);

    for (gi, g) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        let pts: Vec<(f64, f64, f64)> = g
            .summary
            .iter()
            .map(|r| (r.iter as f64, r.values[2 * idx], r.values[2 * idx + 1]))
            .filter(|p| p.1.is_finite())
            .collect();
        if pts.is_empty() {
            continue;
        }
        let upper = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1 + p.2)));
        let lower = pts.iter().rev().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1 - p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = top + 14.0 * (gi as f64 + 1.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text>"#, left + 10.0, escape(&g.name));
    }
    if let Some(o) = oracle {
        let _ = writeln!(s, r#"<line x1="{x0:.1}" x2="{x1:.1}" y1="{:.1}" y2="{:.1}" stroke="black" stroke-dasharray="4 4"/>"#, sy(o), sy(o));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">oracle</text>"#, x1, sy(o) - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Oracle return from the frozen config of a run directory, if computable.
fn oracle_from_run(dir: &Path) -> Option<f64> {
    let config = RunConfig::load(&dir.join("config.toml")).ok()?;
    config.env.build().ok()?.optimal_return()
}

/// Writes `{metric}.csv` for every numeric column and `learning_curve.svg`
/// for `metric`. Returns the files written.
pub fn plot(runs: &[PathBuf], out: &Path, metric: &str, oracle: Option<f64>) -> Result<Vec<PathBuf>> {
    let idx = metric_index(metric)?;
    let groups = runs.iter().map(|d| load_group(d)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (i, name) in CSV_HEADER[2..].iter().enumerate() {
        let path = out.join(format!("{name}.csv"));
        write_metric_csv(&path, &groups, i)?;
        written.push(path);
    }
    let oracle = oracle.or_else(|| {
        (metric == "true_return_mean")
            .then(|| runs.first().and_then(|d| oracle_from_run(d)))
            .flatten()
    });
    let path = out.join("learning_curve.svg");
    fs::write(&path, render_svg(&groups, idx, metric, oracle))?;
    written.push(path);
    Ok(written)
}
