//! `compare`: aggregate run records into AA mean/std per method, refusing
//! records whose streams are not the same experiment.

use std::path::{Path, PathBuf};

use lightcl_core::outcome::MethodTag;

use crate::commands::ensure_dir;
use crate::error::{CliError, Result};
use crate::record::{read_record, RunRecord};
use crate::report::{write_comparison_csv, write_comparison_svg, CompareRow};

pub fn cmd_compare(record_paths: &[PathBuf], out: &Path) -> Result<()> {
    if record_paths.is_empty() {
        return Err(CliError::Config("compare needs at least one record".into()));
    }
    let mut records = Vec::with_capacity(record_paths.len());
    for path in record_paths {
        records.push((path.clone(), read_record(path)?));
    }
    check_streams_align(&records)?;

    // Group by presentation label, preserving first-appearance order.
    let mut labels: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (_, record) in &records {
        let label = method_label(record);
        let slot = match labels.iter().position(|l| *l == label) {
            Some(i) => i,
            None => {
                labels.push(label);
                groups.push(Vec::new());
                labels.len() - 1
            }
        };
        groups[slot].push(record.aa);
    }

    let rows: Vec<CompareRow> = labels
        .iter()
        .zip(&groups)
        .map(|(label, aas)| {
            let n = aas.len() as f64;
            let mean = aas.iter().sum::<f64>() / n;
            let var = aas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            CompareRow {
                method: label.clone(),
                runs: aas.len(),
                aa_mean: mean,
                aa_std: var.sqrt(),
            }
        })
        .collect();

    ensure_dir(out)?;
    write_comparison_csv(&out.join("comparison.csv"), &rows)?;
    write_comparison_svg(&out.join("comparison.svg"), &rows)?;

    println!("{:<16} {:>5} {:>9} {:>9}", "method", "runs", "aa_mean", "aa_std");
    for row in &rows {
        println!(
            "{:<16} {:>5} {:>9.4} {:>9.4}",
            row.method, row.runs, row.aa_mean, row.aa_std
        );
    }
    println!("artifacts         {}", out.display());
    Ok(())
}

/// The ablated trainer (freezing without feature regulation) gets its own
/// bar; everything else groups by method tag.
fn method_label(record: &RunRecord) -> String {
    if record.method == MethodTag::Lightcl {
        let lightcl = record.config.get("lightcl");
        let beta = lightcl
            .and_then(|t| t.get("beta"))
            .and_then(toml::Value::as_float)
            .unwrap_or(1.0);
        let regulation = lightcl
            .and_then(|t| t.get("regulation"))
            .and_then(toml::Value::as_bool)
            .unwrap_or(true);
        if beta == 0.0 || !regulation {
            return "freeze_only".into();
        }
    }
    record.method.to_string()
}

/// Records must describe the same stream and architecture; seeds may differ.
fn check_streams_align(records: &[(PathBuf, RunRecord)]) -> Result<()> {
    let keys = ["stream", "arch"];
    let (first_path, first) = &records[0];
    for (path, record) in &records[1..] {
        for key in keys {
            let a = first.config.get(key);
            let b = record.config.get(key);
            if a != b {
                return Err(CliError::Config(format!(
                    "records disagree on '{key}': {} has {}, {} has {}",
                    first_path.display(),
                    toml_brief(a),
                    path.display(),
                    toml_brief(b),
                )));
            }
        }
    }
    Ok(())
}

fn toml_brief(value: Option<&toml::Value>) -> String {
    match value {
        None => "nothing".into(),
        Some(v) => v.to_string().split_whitespace().collect::<Vec<_>>().join(" "),
    }
}
