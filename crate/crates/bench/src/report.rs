//! Human-readable (markdown) and machine (JSON) summaries of finished runs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, BenchResult};
use crate::runner::{read_json, Aggregate, Manifest, MetricSummary, SweepReport};

/// What a run directory holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RunKind {
    Experiment { manifest: Manifest, aggregate: Aggregate },
    Sweep { sweep: SweepReport },
}

/// Reads a finished experiment or sweep.
pub fn load_run(dir: &Path) -> BenchResult<RunKind> {
    if !dir.is_dir() {
        return Err(BenchError::NotARun(format!("{} is not a directory", dir.display())));
    }
    if dir.join("sweep.json").exists() {
        return Ok(RunKind::Sweep { sweep: read_json(&dir.join("sweep.json"))? });
    }
    if dir.join("aggregate.json").exists() {
        return Ok(RunKind::Experiment {
            manifest: read_json(&dir.join("manifest.json"))?,
            aggregate: read_json(&dir.join("aggregate.json"))?,
        });
    }
    Err(BenchError::NotARun(format!("{} holds no finished experiment or sweep", dir.display())))
}

fn cell(m: &MetricSummary, precision: usize) -> String {
    if m.mean.is_finite() {
        format!("{m:.precision$}")
    } else {
        "n/a".into()
    }
}

fn metric_header(out: &mut String, first: &str) {
    let _ = writeln!(out, "| {first} | seeds | ACC (%) | PSNR (dB) | SSIM | R |");
    let _ = writeln!(out, "|---|---|---|---|---|---|");
}

fn metric_row(out: &mut String, label: &str, a: &Aggregate) {
    let _ = writeln!(
        out,
        "| {label} | {} | {} | {} | {} | {} |",
        a.seeds.len(),
        cell(&a.acc, 2),
        cell(&a.psnr, 3),
        cell(&a.ssim, 3),
        cell(&a.risk, 3)
    );
}

fn experiment_md(out: &mut String, manifest: &Manifest, a: &Aggregate) {
    let _ = writeln!(out, "# {}\n", a.name);
    let _ = writeln!(out, "- dataset: {}", a.dataset);
    let _ = writeln!(out, "- beta_c = {}, beta_r = {}", a.beta_c, a.beta_r);
    let _ = writeln!(out, "- config hash: `{}`", a.config_hash);
    let _ = writeln!(out, "- code version: {}", a.code_version);
    for s in manifest.seeds.iter().filter(|s| !s.ok) {
        let _ = writeln!(out, "- seed {} failed: {}", s.seed, s.error.as_deref().unwrap_or("unknown error"));
    }
    let _ = writeln!(out, "\n## Test metrics (mean ± std over seeds)\n");
    metric_header(out, "run");
    metric_row(out, &a.name, a);
    if !a.defenses.is_empty() {
        let _ = writeln!(out, "\n## Defenses\n");
        let _ = writeln!(out, "| scheme | ACC (%) | PSNR (dB) | SSIM | R |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for d in &a.defenses {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                d.scheme,
                cell(&d.acc, 2),
                cell(&d.psnr, 3),
                cell(&d.ssim, 3),
                cell(&d.risk, 3)
            );
        }
    }
    if let Some(v) = &a.vicious_likelihood {
        let _ = writeln!(out, "\n## Detector\n");
        let _ = writeln!(out, "- vicious likelihood v: {}", cell(v, 4));
        if let Some(h) = &a.output_entropy {
            let _ = writeln!(out, "- histogram output entropy (bits): {}", cell(h, 3));
        }
    }
}

fn sweep_md(out: &mut String, s: &SweepReport) {
    let _ = writeln!(out, "# {} (sweep)\n", s.name);
    let _ = writeln!(out, "- base config hash: `{}`", s.base_config_hash);
    let _ = writeln!(out, "- code version: {}\n", s.code_version);
    metric_header(out, "point");
    for r in &s.rows {
        metric_row(out, &r.label, &r.aggregate);
    }
}

/// Writes `report.md` and `summary.json` into `dir` and returns the
/// markdown.
pub fn emit_report(dir: &Path) -> BenchResult<String> {
    let run = load_run(dir)?;
    let mut md = String::new();
    match &run {
        RunKind::Experiment { manifest, aggregate } => experiment_md(&mut md, manifest, aggregate),
        RunKind::Sweep { sweep } => sweep_md(&mut md, sweep),
    }
    fs::write(dir.join("report.md"), &md)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    Ok(md)
}

/// `b - a` for one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    #[serde(with = "crate::runner::nan_as_null")]
    pub a: f64,
    #[serde(with = "crate::runner::nan_as_null")]
    pub b: f64,
    #[serde(with = "crate::runner::nan_as_null")]
    pub delta: f64,
}

fn aggregates(run: &RunKind) -> Vec<(String, Aggregate)> {
    match run {
        RunKind::Experiment { aggregate, .. } => vec![(String::new(), aggregate.clone())],
        RunKind::Sweep { sweep } => sweep.rows.iter().map(|r| (format!("{}.", r.label), r.aggregate.clone())).collect(),
    }
}

/// Per-metric differences between two runs of the same shape.
pub fn compare_runs(a_dir: &Path, b_dir: &Path) -> BenchResult<Vec<MetricDelta>> {
    let a = aggregates(&load_run(a_dir)?);
    let b = aggregates(&load_run(b_dir)?);
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.0 != y.0) {
        return Err(BenchError::Config("runs have different shapes and cannot be compared".into()));
    }
    let mut out = Vec::new();
    for ((prefix, x), (_, y)) in a.iter().zip(&b) {
        let mut push = |name: String, p: f64, q: f64| out.push(MetricDelta { metric: name, a: p, b: q, delta: q - p });
        push(format!("{prefix}acc"), x.acc.mean, y.acc.mean);
        push(format!("{prefix}psnr"), x.psnr.mean, y.psnr.mean);
        push(format!("{prefix}ssim"), x.ssim.mean, y.ssim.mean);
        push(format!("{prefix}risk"), x.risk.mean, y.risk.mean);
        for (dx, dy) in x.defenses.iter().zip(&y.defenses) {
            if dx.scheme == dy.scheme {
                push(format!("{prefix}{}.acc", dx.scheme), dx.acc.mean, dy.acc.mean);
                push(format!("{prefix}{}.risk", dx.scheme), dx.risk.mean, dy.risk.mean);
            }
        }
        if let (Some(vx), Some(vy)) = (&x.vicious_likelihood, &y.vicious_likelihood) {
            push(format!("{prefix}v"), vx.mean, vy.mean);
        }
    }
    Ok(out)
}

pub fn comparison_md(a: &Path, b: &Path, deltas: &[MetricDelta]) -> String {
    let mut md = format!("# Comparison\n\n- a: {}\n- b: {}\n\n| metric | a | b | b - a |\n|---|---|---|---|\n", a.display(), b.display());
    for d in deltas {
        let _ = writeln!(md, "| {} | {:.6} | {:.6} | {:+.6} |", d.metric, d.a, d.b, d.delta);
    }
    md
}

/// Largest absolute delta, NaN pairs counting as equal.
pub fn max_abs_delta(deltas: &[MetricDelta]) -> f64 {
    deltas
        .iter()
        .map(|d| if d.a.is_nan() && d.b.is_nan() { 0.0 } else if d.delta.is_nan() { f64::INFINITY } else { d.delta.abs() })
        .fold(0.0, f64::max)
}
