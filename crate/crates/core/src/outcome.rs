//! Results shared by every trainer.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lightcl::PositionSet;
use crate::metrics::AccuracyMatrix;
use crate::model::Model;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    Sgd,
    Joint,
    Ewc,
    Er,
    Lightcl,
}

impl core::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            MethodTag::Sgd => "sgd",
            MethodTag::Joint => "joint",
            MethodTag::Ewc => "ewc",
            MethodTag::Er => "er",
            MethodTag::Lightcl => "lightcl",
        })
    }
}

/// Scalars recorded at the end of one task phase. Loss fields are `None`
/// when the phase ran zero steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: usize,
    pub steps: usize,
    pub train_loss_final: Option<f64>,
    /// Regulation penalty at the final step; `None` when regulation was off.
    pub reg_loss_final: Option<f64>,
}

/// Everything a finished run produces, still in memory.
#[derive(Debug, Clone)]
pub struct RunOutcome<F> {
    pub method: MethodTag,
    /// Model state after each task phase, in task order.
    pub checkpoints: Vec<Model<F>>,
    pub matrix: AccuracyMatrix,
    /// Average accuracy of the final checkpoint over all tasks.
    pub aa: f64,
    pub per_task: Vec<TaskSummary>,
    /// |I| after each task (empty for methods without position sets).
    pub i_size_trajectory: Vec<usize>,
    /// Final regulation position set (empty for baselines).
    pub positions: PositionSet,
}

impl<F: Scalar> RunOutcome<F> {
    pub fn final_model(&self) -> &Model<F> {
        self.checkpoints.last().expect("runs produce at least one checkpoint")
    }
}
