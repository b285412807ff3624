//! The `report` command: pretty-prints a previously written report JSON.

use std::path::Path;

use anyhow::{bail, Result};
use serde_json::Value;

use crate::report::{read_report, render_table};

/// Flattens a JSON tree into dotted-path rows.
fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (key, v) in map {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                flatten(&path, v, rows);
            }
        }
        Value::Array(items) => {
            if items.len() > 24 {
                rows.push((prefix.to_string(), format!("[{} entries]", items.len())));
            } else {
                for (i, v) in items.iter().enumerate() {
                    flatten(&format!("{prefix}[{i}]"), v, rows);
                }
            }
        }
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

pub fn run(path: &Path) -> Result<()> {
    let doc = read_report(path)?;
    let (Some(command), Some(run_id)) = (
        doc.get("command").and_then(Value::as_str),
        doc.get("run_id").and_then(Value::as_str),
    ) else {
        bail!(
            "{} does not look like a run report (missing command/run_id)",
            path.display()
        );
    };
    let mut rows = vec![
        ("command".to_string(), command.to_string()),
        ("run_id".to_string(), run_id.to_string()),
    ];
    if let Some(results) = doc.get("results") {
        flatten("results", results, &mut rows);
    }
    print!("{}", render_table(&format!("run {run_id}"), &rows));
    Ok(())
}
