//! Continual-learning evaluation metrics.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::profile::evaluate_accuracy;
use crate::scalar::Scalar;
use crate::stream::{EvalMode, TaskStream};

/// Accuracy of task `t_eval` measured on the checkpoint after task `t_after`,
/// stored column-wise: `columns[t_after - 1][t_eval - 1]`. Only tasks seen so
/// far are evaluated, so column `t_after` holds `t_after` entries (a joint
/// phase stores one column covering every task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub eval_mode: EvalMode,
    pub columns: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(eval_mode: EvalMode) -> Self {
        AccuracyMatrix {
            eval_mode,
            columns: Vec::new(),
        }
    }

    pub fn get(&self, eval_task: usize, after_task: usize) -> Option<f64> {
        self.columns
            .get(after_task - 1)
            .and_then(|col| col.get(eval_task - 1))
            .copied()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }
}

/// Average accuracy: mean of the final checkpoint's accuracy over all
/// `num_tasks` tasks. Errors if the final column is incomplete.
pub fn average_accuracy(matrix: &AccuracyMatrix, num_tasks: usize) -> Result<f64> {
    let last = matrix
        .columns
        .last()
        .ok_or(Error::IncompleteMatrix { have: 0, want: num_tasks })?;
    if last.len() != num_tasks {
        return Err(Error::IncompleteMatrix {
            have: last.len(),
            want: num_tasks,
        });
    }
    Ok(last.iter().sum::<f64>() / num_tasks as f64)
}

/// Evaluate one checkpoint per task into a triangular matrix. Checkpoint `i`
/// is the model state after task `i + 1`.
pub fn fill_matrix<F: Scalar>(
    checkpoints: &[Model<F>],
    stream: &TaskStream<F>,
    mode: EvalMode,
) -> Result<AccuracyMatrix> {
    if checkpoints.len() != stream.tasks.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "{} checkpoints for {} tasks",
            checkpoints.len(),
            stream.tasks.len()
        )));
    }
    let mut matrix = AccuracyMatrix::new(mode);
    for (ci, model) in checkpoints.iter().enumerate() {
        let after = ci + 1;
        let mut col = Vec::with_capacity(after);
        for eval in 1..=after {
            let task = &stream.tasks[eval - 1];
            let mask = stream.eval_class_mask(eval, after, mode);
            col.push(evaluate_accuracy(
                model,
                &task.test_inputs,
                &task.test_labels,
                &mask,
            )?);
        }
        matrix.columns.push(col);
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_needs_complete_final_column() {
        let mut m = AccuracyMatrix::new(EvalMode::Til);
        m.columns.push(alloc::vec![0.5]);
        m.columns.push(alloc::vec![0.5, 0.9]);
        assert!((average_accuracy(&m, 2).unwrap() - 0.7).abs() < 1e-15);
        assert!(average_accuracy(&m, 3).is_err());
        assert!(average_accuracy(&AccuracyMatrix::new(EvalMode::Til), 1).is_err());
    }

    #[test]
    fn get_indexes_one_based() {
        let mut m = AccuracyMatrix::new(EvalMode::Til);
        m.columns.push(alloc::vec![0.25]);
        assert_eq!(m.get(1, 1), Some(0.25));
        assert_eq!(m.get(2, 1), None);
        assert_eq!(m.get(1, 2), None);
    }
}
