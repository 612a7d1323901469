//! Run outputs: the per-step metrics file, the wall-clock timing sidecar,
//! and the check/probe reports.
//!
//! The metrics file is fully determined by (config, seeds): re-running a
//! command reproduces it byte for byte. Wall-clock measurements can never
//! satisfy that, so the `select_ms`/`train_ms` columns stay in the schema as
//! zero placeholders and the real measurements go to the `timing.csv`
//! sidecar next to it.

use crate::data::DataFormat;
use crate::error::Result;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

pub const METRICS_HEADER: &str =
    "step,loss,grad_variance,small_src_acc,big_src_acc,select_ms,train_ms";

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub grad_variance: f64,
    pub small_src_acc: Option<f64>,
    pub big_src_acc: Option<f64>,
    pub select_ms: f64,
    pub train_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub step: usize,
    pub select_ms: f64,
    pub train_ms: f64,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics(path: &Path, format: DataFormat, rows: &[MetricsRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        DataFormat::Csv => {
            writeln!(out, "{METRICS_HEADER}")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.step,
                    r.loss,
                    r.grad_variance,
                    fmt_opt(r.small_src_acc),
                    fmt_opt(r.big_src_acc),
                    r.select_ms,
                    r.train_ms
                )?;
            }
        }
        DataFormat::Jsonl => {
            for r in rows {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_timings(path: &Path, rows: &[TimingRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,select_ms,train_ms")?;
    for r in rows {
        writeln!(out, "{},{:.3},{:.3}", r.step, r.select_ms, r.train_ms)?;
    }
    out.flush()?;
    Ok(())
}

/// One theory-check or probe result row.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
    pub details: String,
}

impl CheckRow {
    pub fn print(&self) {
        println!(
            "THEORY {}: statistic={:.6} threshold={:.6} {} ({})",
            self.name,
            self.statistic,
            self.threshold,
            if self.passed { "PASS" } else { "FAIL" },
            self.details
        );
    }
}

pub fn write_checks(path: &Path, format: DataFormat, rows: &[CheckRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        DataFormat::Csv => {
            writeln!(out, "name,statistic,threshold,passed,details")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},\"{}\"",
                    r.name, r.statistic, r.threshold, r.passed, r.details
                )?;
            }
        }
        DataFormat::Jsonl => {
            for r in rows {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-checkpoint variance comparison between the selected mini-batch and a
/// same-size random subset. The variance statistic is the trace of the
/// empirical covariance of mean-gradient vectors over the resamples.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceRow {
    pub checkpoint_step: usize,
    pub var_random: f64,
    pub var_selected: f64,
    pub gap: f64,
    pub bound: Option<f64>,
    pub p_value: f64,
}

pub fn write_variance(path: &Path, format: DataFormat, rows: &[VarianceRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        DataFormat::Csv => {
            writeln!(
                out,
                "checkpoint_step,var_random,var_selected,gap,bound,p_value"
            )?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.checkpoint_step,
                    r.var_random,
                    r.var_selected,
                    r.gap,
                    fmt_opt(r.bound),
                    r.p_value
                )?;
            }
        }
        DataFormat::Jsonl => {
            for r in rows {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// End-of-run summary, deterministic like the metrics file.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub steps: usize,
    pub b: usize,
    pub r: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub final_small_src_acc: Option<f64>,
    pub final_big_src_acc: Option<f64>,
    pub final_overall_acc: f64,
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut out, summary)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
