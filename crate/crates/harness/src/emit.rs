//! Result files: `results.json`, `precision.csv`, `success.csv` and the
//! wall-clock `throughput.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::metrics::success_threshold;
use crate::ope::OpeReport;

pub const RESULTS_FILE: &str = "results.json";
pub const PRECISION_FILE: &str = "precision.csv";
pub const SUCCESS_FILE: &str = "success.csv";
pub const THROUGHPUT_FILE: &str = "throughput.json";

/// Pretty JSON with object keys in sorted order and a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json's default map is ordered, so a round trip through Value
    // sorts every object by key.
    let value = serde_json::to_value(value).map_err(|e| HarnessError::Validation(e.to_string()))?;
    let mut text = serde_json::to_string_pretty(&value)
        .map_err(|e| HarnessError::Validation(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn curve_csv(thresholds: impl Iterator<Item = f64>, values: &[f64]) -> String {
    let mut out = String::from("threshold,value\n");
    for (t, v) in thresholds.zip(values) {
        let _ = writeln!(out, "{t:.6},{v:.6}");
    }
    out
}

#[derive(Serialize)]
struct SequenceThroughput<'a> {
    name: &'a str,
    frames: usize,
    fps: f64,
}

#[derive(Serialize)]
struct Throughput<'a> {
    sequences: Vec<SequenceThroughput<'a>>,
    overall_fps: f64,
}

pub fn throughput_json(report: &OpeReport) -> Result<String> {
    canonical_json(&Throughput {
        sequences: report
            .sequences
            .iter()
            .map(|s| SequenceThroughput {
                name: &s.name,
                frames: s.result.frames(),
                fps: s.result.fps,
            })
            .collect(),
        overall_fps: report.aggregate.as_ref().map_or(0.0, |a| a.fps),
    })
}

pub(crate) fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// Writes all four files into `out_dir`, creating it if needed.
pub fn emit_results(report: &OpeReport, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    write(&out_dir.join(RESULTS_FILE), &canonical_json(report)?)?;

    let (precision, success) = match &report.aggregate {
        Some(a) => (a.precision_curve.as_slice(), a.success_curve.as_slice()),
        None => (&[][..], &[][..]),
    };
    write(
        &out_dir.join(PRECISION_FILE),
        &curve_csv((0..precision.len()).map(|t| t as f64), precision),
    )?;
    write(
        &out_dir.join(SUCCESS_FILE),
        &curve_csv((0..success.len()).map(success_threshold), success),
    )?;
    write(&out_dir.join(THROUGHPUT_FILE), &throughput_json(report)?)
}
