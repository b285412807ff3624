//! The `gradcheck` command: runs the registered finite-difference suite
//! over the analytic gradients and exits non-zero on any failure.

use anyhow::{bail, Result};

use sodet_core::gradcheck::suite::{run_cases, standard_cases, SuiteParams};
use sodet_core::gradcheck::FdSpec;

use crate::config::RunConfig;
use crate::report::{num, render_table, write_report, ReportDoc};

pub fn run(config: &RunConfig, only: Option<&str>, plant_fault: bool) -> Result<()> {
    let suite_params = SuiteParams {
        scale_target: config.scale_target_params(),
        focal: config.focal_params(),
        strict_min: config.sampling.strict_min,
        share_branch_convs: config.reweight.share_branch_convs,
        seed: config.seed,
    };
    let mut cases = standard_cases(&suite_params);

    if let Some(filter) = only {
        let wanted: Vec<&str> = filter
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        cases.retain(|c| wanted.iter().any(|w| c.name.contains(w)));
    }
    if plant_fault {
        if let Some(first) = cases.first_mut() {
            first.fault_scale = 1.01;
        }
    }

    let spec = FdSpec::default();
    let reports = run_cases(cases, &spec)?;

    let mut rows: Vec<(String, String)> = Vec::new();
    rows.push((
        "checks".to_string(),
        format!("{} (tolerance {})", reports.len(), num(spec.tolerance)),
    ));
    for r in &reports {
        rows.push((
            r.name.clone(),
            format!(
                "{} samples={} max_rel_err={}",
                if r.passed { "pass" } else { "FAIL" },
                r.samples,
                num(r.max_rel_err),
            ),
        ));
    }
    let failures: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();

    let table = render_table("gradient checks", &rows);
    let doc = ReportDoc::new("gradcheck", config, serde_json::to_value(&reports)?);
    let (json_path, txt_path) = write_report(&doc, &table)?;
    print!("{table}");
    println!("report: {} / {}", json_path.display(), txt_path.display());

    if !failures.is_empty() {
        let detail: Vec<String> = reports
            .iter()
            .filter(|r| !r.passed)
            .flat_map(|r| {
                r.failures.iter().take(2).map(|f| {
                    format!(
                        "{}: coord {} at {:?}: analytic {} vs numeric {}",
                        r.name, f.coord, f.x, f.analytic, f.numeric
                    )
                })
            })
            .collect();
        bail!(
            "gradient checks failed: {} [{}]",
            failures.join(", "),
            detail.join("; ")
        );
    }
    Ok(())
}
