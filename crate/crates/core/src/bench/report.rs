//! CSV and JSON benchmark reports.

use std::path::Path;

use super::{BenchResult, Format};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 13] = [
    "mode",
    "B",
    "T",
    "U",
    "H",
    "H_A",
    "H_L",
    "V",
    "precision",
    "median_step_seconds",
    "peak_bytes",
    "status",
    "seed",
];

fn csv_row(r: &BenchResult) -> [String; 13] {
    let c = &r.config;
    [
        c.mode.to_string(),
        c.batch_size.to_string(),
        c.frames.to_string(),
        c.labels.to_string(),
        c.hidden.to_string(),
        c.acoustic.to_string(),
        c.label_dim.to_string(),
        c.vocab.to_string(),
        c.precision.to_string(),
        r.median_step_seconds
            .map(|s| s.to_string())
            .unwrap_or_default(),
        r.peak_bytes.to_string(),
        r.status.to_string(),
        c.seed.to_string(),
    ]
}

/// Serializes results; one record per result in input order.
pub fn emit_report(results: &[BenchResult], format: Format) -> Result<String> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no results to report".into()));
    }
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_COLUMNS)?;
            for r in results {
                w.write_record(csv_row(r))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Report(e.error().to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Report(e.to_string()))
        }
        Format::Json => Ok(serde_json::to_string_pretty(results)? + "\n"),
    }
}

/// Writes a report to `out`, or to stdout when `out` is `None`.
pub fn write_report(results: &[BenchResult], format: Format, out: Option<&Path>) -> Result<()> {
    let text = emit_report(results, format)?;
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn parse_json_report(text: &str) -> Result<Vec<BenchResult>> {
    Ok(serde_json::from_str(text)?)
}
