//! `cost`: training FLOPs and peak-memory accounting for a declarative
//! architecture spec, reported for the plain trainer and the freeze+regulate
//! configuration side by side.

use std::path::{Path, PathBuf};

use lightcl_core::accounting::{
    feature_map_shapes, fs_memory_estimate, full_suffix_positions, resolve_spec, resource_report,
    ArchSpec, CostFreeze, RegulationCost, ResourceReport, TrainingPlan,
};
use serde::{Deserialize, Serialize};

use crate::commands::ensure_dir;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Architecture spec file; relative paths resolve against this config.
    pub spec: PathBuf,
    pub output_dir: PathBuf,
    pub batch_size: u64,
    pub batches_per_epoch: u64,
    pub epochs: u64,
    pub tasks: u64,
    #[serde(default)]
    pub extra_forward_batches: u64,
    /// Freeze boundary of the regulated configuration; omit to compare two
    /// unfrozen plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fz_layer: Option<String>,
    pub mem_size: u64,
}

#[derive(Serialize)]
struct RatioSummary {
    training_flops_sgd: u128,
    training_flops_lightcl: u128,
    flops_ratio: f64,
    peak_memory_bytes_sgd: u64,
    peak_memory_bytes_lightcl: u64,
    peak_memory_ratio: f64,
    fs_bytes: u64,
}

pub fn load_cost_config(path: &Path, sets: &[String], out: Option<&Path>) -> Result<CostConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for set in sets {
        crate::config::apply_set(&mut value, set)?;
    }
    let mut config: CostConfig = value
        .try_into()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(out) = out {
        config.output_dir = out.to_path_buf();
    }
    let base = path.parent().unwrap_or(Path::new("."));
    if config.spec.is_relative() {
        config.spec = base.join(&config.spec);
    }
    Ok(config)
}

pub fn load_arch_spec(path: &Path) -> Result<ArchSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_cost(config: &CostConfig) -> Result<()> {
    let spec = load_arch_spec(&config.spec)?;
    let resolved = resolve_spec(&spec).map_err(CliError::from)?;
    let plan = TrainingPlan {
        batch_size: config.batch_size,
        batches: config.batches_per_epoch,
        epochs: config.epochs,
        tasks: config.tasks,
        extra_forward_batches: config.extra_forward_batches,
    };

    let plain = CostFreeze::default();
    let sgd = resource_report(&spec, &plain, &plan, None, 0).map_err(CliError::from)?;

    let freeze = CostFreeze { fz_layer: config.fz_layer.clone() };
    let positions = full_suffix_positions(&spec, &freeze).map_err(CliError::from)?;
    let fs_bytes = fs_memory_estimate(&positions, config.mem_size, &feature_map_shapes(&resolved))
        .map_err(CliError::from)?;
    let regulated = resource_report(
        &spec,
        &freeze,
        &plan,
        Some(RegulationCost { mem_size: config.mem_size }),
        fs_bytes,
    )
    .map_err(CliError::from)?;

    let out = config.output_dir.clone();
    ensure_dir(&out)?;
    let resolved_cfg = toml::to_string_pretty(config)
        .map_err(|e| CliError::Config(format!("cannot serialize resolved config: {e}")))?;
    std::fs::write(out.join("config.toml"), resolved_cfg)
        .map_err(|e| CliError::io(&out.join("config.toml"), e))?;
    write_report(&out.join("cost_sgd.json"), &sgd)?;
    write_report(&out.join("cost_lightcl.json"), &regulated)?;

    let summary = RatioSummary {
        training_flops_sgd: sgd.totals.training_flops,
        training_flops_lightcl: regulated.totals.training_flops,
        flops_ratio: ratio(
            regulated.totals.training_flops as f64,
            sgd.totals.training_flops as f64,
        ),
        peak_memory_bytes_sgd: sgd.totals.peak_memory_bytes,
        peak_memory_bytes_lightcl: regulated.totals.peak_memory_bytes,
        peak_memory_ratio: ratio(
            regulated.totals.peak_memory_bytes as f64,
            sgd.totals.peak_memory_bytes as f64,
        ),
        fs_bytes,
    };
    let summary_path = out.join("cost_summary.json");
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::format(&summary_path, e.to_string()))?;
    std::fs::write(&summary_path, text).map_err(|e| CliError::io(&summary_path, e))?;

    let gb = 1.0e9;
    let mb = 1024.0 * 1024.0;
    println!("{:<22} {:>16} {:>16} {:>8}", "", "plain", "freeze+regulate", "ratio");
    println!(
        "{:<22} {:>14.2} G {:>14.2} G {:>8.3}",
        "training FLOPs",
        summary.training_flops_sgd as f64 / gb,
        summary.training_flops_lightcl as f64 / gb,
        summary.flops_ratio
    );
    println!(
        "{:<22} {:>13.1} MB {:>13.1} MB {:>8.3}",
        "peak memory",
        summary.peak_memory_bytes_sgd as f64 / mb,
        summary.peak_memory_bytes_lightcl as f64 / mb,
        summary.peak_memory_ratio
    );
    println!(
        "{:<22} {:>13.2} MB ({} positions, m = {})",
        "feature standards",
        fs_bytes as f64 / mb,
        positions.len(),
        config.mem_size
    );
    println!("artifacts         {}", out.display());
    Ok(())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 { f64::NAN } else { num / den }
}

fn write_report(path: &Path, report: &ResourceReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
