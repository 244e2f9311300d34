//! Report files: an attack-by-mode matrix, a per-mode summary and a full
//! JSON dump.
//!
//! `table1.csv` has one row per attack and, per mode, an AUC column and a
//! TPR column at the first configured FPR. `table2.csv` has one row per
//! mode with SNR, STOI, an empty PESQ column kept for layout parity, the
//! macro-average AUC and TPR at every FPR, and clipping and failure counts.
//! Failed cells are written as `failed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{CellOutcome, EvalReport, REPORT_SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Report(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn table1_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let fpr = report.target_fprs.first().copied().unwrap_or(0.05);
    let mut header = vec!["attack".to_string()];
    for m in &report.modes {
        header.push(format!("{} AUC", m.mode));
        header.push(format!("{} TPR@{fpr}", m.mode));
    }
    let mut rows = vec![header];
    for a in &report.attacks {
        let mut row = vec![a.clone()];
        for m in &report.modes {
            match report.cell(m.mode, a).map(|c| &c.outcome) {
                Some(CellOutcome::Ok(c)) => {
                    row.push(fmt(c.fused.auc));
                    row.push(c.fused.tpr.first().map_or_else(String::new, |&t| fmt(t)));
                }
                _ => row.extend(["failed".to_string(), "failed".to_string()]),
            }
        }
        rows.push(row);
    }
    rows
}

pub fn table2_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt);
    let mut header: Vec<String> = ["mode", "snr_db", "stoi", "pesq", "auc"].map(String::from).to_vec();
    header.extend(report.target_fprs.iter().map(|f| format!("tpr@{f}")));
    header.extend(["clipped_samples", "failed_cells"].map(String::from));
    let mut rows = vec![header];
    for m in &report.modes {
        let mut row = vec![m.mode.to_string(), opt(m.snr_db), opt(m.stoi), String::new(), opt(m.macro_auc)];
        for i in 0..report.target_fprs.len() {
            row.push(opt(m.macro_tpr.get(i).copied()));
        }
        row.push(m.clipped_samples.to_string());
        row.push(m.failed_cells.to_string());
        rows.push(row);
    }
    rows
}

/// Writes the report in `format` under `out_dir`; returns the files written.
pub fn emit_report(report: &EvalReport, format: ReportFormat, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.cells.is_empty() || report.modes.is_empty() {
        return Err(Error::Report("report has no cells".into()));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match format {
        ReportFormat::Csv => {
            let t1 = out_dir.join("table1.csv");
            let t2 = out_dir.join("table2.csv");
            write_csv(&t1, table1_rows(report))?;
            write_csv(&t2, table2_rows(report))?;
            Ok(vec![t1, t2])
        }
        ReportFormat::Json => {
            let path = out_dir.join("report.json");
            write_json(&path, report)?;
            Ok(vec![path])
        }
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Parses a JSON report, rejecting other schema versions.
pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvalReport =
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Report(format!(
            "{}: schema version {}, expected {REPORT_SCHEMA_VERSION}",
            path.display(),
            report.schema_version
        )));
    }
    Ok(report)
}
