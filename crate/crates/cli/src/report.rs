//! Run reports: a machine-readable JSON document plus an aligned
//! plain-text table, written side by side and named by run id.
//!
//! The JSON is byte-reproducible for identical (config, seed, inputs).
//! The text table carries a single timestamp header line; everything
//! below it is byte-reproducible too.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// The machine-readable report document.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDoc {
    pub command: String,
    pub run_id: String,
    pub config: RunConfig,
    pub results: serde_json::Value,
}

impl ReportDoc {
    pub fn new(command: &str, config: &RunConfig, results: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            run_id: config.run_id(),
            config: config.clone(),
            results,
        }
    }
}

/// A two-column table with aligned keys.
pub fn render_table(title: &str, rows: &[(String, String)]) -> String {
    let key_width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    out.push_str(title);
    out.push('\n');
    out.push_str(&"-".repeat(title.len()));
    out.push('\n');
    for (k, v) in rows {
        out.push_str(&format!("{k:<key_width$}  {v}\n"));
    }
    out
}

/// Writes `<out>/<command>-<runid>.json` and `.txt`; returns both paths.
pub fn write_report(doc: &ReportDoc, table_body: &str) -> Result<(PathBuf, PathBuf)> {
    let out_dir = doc.config.resolved_out_dir();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let stem = format!("{}-{}", doc.command, doc.run_id);

    let json_path = out_dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(doc).expect("report serializes");
    std::fs::write(&json_path, json)
        .with_context(|| format!("writing {}", json_path.display()))?;

    let txt_path = out_dir.join(format!("{stem}.txt"));
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let txt = format!("# generated-at-unix: {stamp}\n{table_body}");
    std::fs::write(&txt_path, txt).with_context(|| format!("writing {}", txt_path.display()))?;

    Ok((json_path, txt_path))
}

/// Reads a report JSON back for pretty-printing.
pub fn read_report(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading report {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
}

/// Formats a float for tables with full round-trip precision.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Formats an optional metric, "-" when absent.
pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "-".to_string())
}
