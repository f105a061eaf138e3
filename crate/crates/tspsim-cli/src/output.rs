//! CSV, manifest and plot-data writers.

use anyhow::{Context, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use tspsim::montecarlo::{ExperimentSpec, Metric, MetricsReport, Sweep};

#[derive(Serialize)]
struct CsvRow<'a> {
    sweep_value: f64,
    metric: &'a str,
    mean: f64,
    half_width: f64,
    n: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    drops: usize,
    workers: usize,
    signal_level: bool,
    sweep: &'a str,
    sweep_values: Vec<f64>,
    series: Vec<SeriesEntry<'a>>,
    noise_scaling: String,
    config: BTreeMap<String, String>,
    versions: BTreeMap<&'a str, &'a str>,
    wall_time_s: f64,
    notes: &'a [String],
    files: Vec<String>,
}

#[derive(Serialize)]
struct SeriesEntry<'a> {
    label: &'a str,
    scheme: String,
    overrides: &'a [(String, String)],
}

fn file_part(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// One CSV per metric, rows in report order.
pub fn write_csvs(dir: &Path, report: &MetricsReport) -> Result<Vec<String>> {
    let mut files = Vec::new();
    let mut metrics: Vec<Metric> = Vec::new();
    for r in &report.rows {
        if !metrics.contains(&r.metric) {
            metrics.push(r.metric);
        }
    }
    for m in metrics {
        let name = format!("{}.csv", m.name());
        let mut w = csv::Writer::from_path(dir.join(&name))?;
        for r in report.rows.iter().filter(|r| r.metric == m) {
            w.serialize(CsvRow {
                sweep_value: r.sweep_value,
                metric: &r.label(),
                mean: r.estimate.mean,
                half_width: r.estimate.half_width,
                n: r.estimate.n,
            })?;
        }
        w.flush()?;
        files.push(name);
    }
    Ok(files)
}

/// Columnar text files, one per (figure, curve).
pub fn write_plotdata(dir: &Path, report: &MetricsReport) -> Result<Vec<String>> {
    if report.is_empty() {
        eprintln!("warning: report is empty, no plot data written");
        return Ok(Vec::new());
    }
    let plot = dir.join("plot");
    fs::create_dir_all(&plot)?;
    let mut files = Vec::new();
    let mut curves: Vec<String> = Vec::new();
    for r in &report.rows {
        let l = r.label();
        if !curves.contains(&l) {
            curves.push(l);
        }
    }
    for c in curves {
        let name = format!("{}__{}.dat", file_part(&report.experiment), file_part(&c));
        let mut text = format!("# {c}\n# {} mean half_width n\n", report.sweep_label);
        for r in report.rows.iter().filter(|r| r.label() == c) {
            let e = &r.estimate;
            text.push_str(&format!(
                "{} {} {} {}\n",
                r.sweep_value, e.mean, e.half_width, e.n
            ));
        }
        fs::write(plot.join(&name), text)?;
        files.push(format!("plot/{name}"));
    }
    for cdf in &report.cdfs {
        let name = format!(
            "{}__cdf__{}__{}={}.dat",
            file_part(&report.experiment),
            file_part(&cdf.series),
            file_part(&report.sweep_label),
            cdf.sweep_value
        );
        let mut text = format!(
            "# {} at {} = {}\n# value probability\n",
            cdf.series, report.sweep_label, cdf.sweep_value
        );
        for (x, p) in &cdf.points {
            text.push_str(&format!("{x} {p}\n"));
        }
        fs::write(plot.join(&name), text)?;
        files.push(format!("plot/{name}"));
    }
    Ok(files)
}

pub fn write_all(
    dir: &Path,
    spec: &ExperimentSpec,
    report: &MetricsReport,
    wall_time_s: f64,
) -> Result<usize> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = write_csvs(dir, report)?;
    files.extend(write_plotdata(dir, report)?);
    let manifest = Manifest {
        experiment: &spec.name,
        seed: spec.seed,
        drops: spec.drops,
        workers: spec.workers,
        signal_level: spec.signal,
        sweep: spec.sweep.label(),
        sweep_values: match &spec.sweep {
            Sweep::None => Vec::new(),
            s => s.values(),
        },
        series: spec
            .series
            .iter()
            .map(|s| SeriesEntry {
                label: &s.label,
                scheme: format!("{:?}", s.scheme),
                overrides: &s.overrides,
            })
            .collect(),
        noise_scaling: format!("{:?}", spec.scenario.power.noise_scaling),
        config: spec.scenario.to_flat().into_iter().collect(),
        versions: BTreeMap::from([
            ("simulate", env!("CARGO_PKG_VERSION")),
            ("tspsim", tspsim::VERSION),
        ]),
        wall_time_s,
        notes: &report.notes,
        files: files.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(files.len() + 1)
}
