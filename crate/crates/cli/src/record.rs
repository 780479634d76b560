//! Run-record JSON and the accuracy-matrix CSV: the numeric artifacts a
//! finished run persists next to its resolved config.

use std::path::{Path, PathBuf};

use lightcl_core::accounting::ResourceReport;
use lightcl_core::metrics::AccuracyMatrix;
use lightcl_core::outcome::{MethodTag, RunOutcome};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: usize,
    pub train_loss_final: f64,
    /// 0.0 on tasks trained without an active regulation term.
    pub reg_loss_final: f64,
    /// Accuracy on every task seen so far, evaluated on this task's
    /// checkpoint; index 0 is task 1.
    pub acc_each_seen_task: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: toml::Value,
    pub method: MethodTag,
    pub per_task: Vec<TaskRecord>,
    #[serde(rename = "AA")]
    pub aa: f64,
    #[serde(rename = "I_size_trajectory")]
    pub i_size_trajectory: Vec<usize>,
    pub checkpoints: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource: Option<ResourceReport>,
}

pub fn build_record(
    outcome: &RunOutcome<f32>,
    config: toml::Value,
    checkpoints: Vec<PathBuf>,
    resource: Option<ResourceReport>,
) -> RunRecord {
    let per_task = outcome
        .per_task
        .iter()
        .enumerate()
        .map(|(i, summary)| TaskRecord {
            task_id: summary.task_id,
            train_loss_final: summary.train_loss_final.unwrap_or(0.0),
            reg_loss_final: summary.reg_loss_final.unwrap_or(0.0),
            acc_each_seen_task: outcome.matrix.columns[i].clone(),
        })
        .collect();
    RunRecord {
        config,
        method: outcome.method,
        per_task,
        aa: outcome.aa,
        i_size_trajectory: outcome.i_size_trajectory.clone(),
        checkpoints,
        resource,
    }
}

pub fn write_record(path: &Path, record: &RunRecord) -> Result<()> {
    let text = serde_json::to_string_pretty(record)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

/// Rows are evaluation tasks, columns are "after task" checkpoints. Cells a
/// checkpoint never evaluated (tasks not yet seen) are left empty. A joint
/// phase writes its single column under `after_task_1`.
pub fn write_matrix_csv(path: &Path, matrix: &AccuracyMatrix, num_tasks: usize) -> Result<()> {
    let cols = matrix.num_columns();
    let mut text = String::from("eval_task");
    for after in 1..=cols {
        text.push_str(&format!(",after_task_{after}"));
    }
    text.push('\n');
    for eval in 1..=num_tasks {
        text.push_str(&eval.to_string());
        for after in 1..=cols {
            text.push(',');
            if let Some(v) = matrix.get(eval, after) {
                text.push_str(&format!("{v:.6}"));
            }
        }
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
