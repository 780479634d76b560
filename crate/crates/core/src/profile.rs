//! Per-layer memory-stability / learning-plasticity profiling.
//!
//! A layer's scores come from swapping it between two consecutive task
//! checkpoints and measuring accuracy shifts: restoring an old layer into the
//! current model recovers old-task accuracy where the layer drifted (memory
//! stability) and costs new-task accuracy where the layer did the new
//! learning (learning plasticity, reported as a signed difference).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::stream::TaskSpec;
use crate::tensor::Tensor;

/// Forward pass chunk during evaluation; bounds peak activation memory.
const EVAL_CHUNK: usize = 64;

/// Top-1 accuracy with predictions restricted to `class_mask` (sorted global
/// class ids). Ties resolve to the lower class id.
pub fn evaluate_accuracy<F: Scalar>(
    model: &Model<F>,
    inputs: &Tensor<F>,
    labels: &[usize],
    class_mask: &[usize],
) -> Result<f64> {
    let n = inputs.batch();
    if n == 0 || labels.is_empty() {
        return Err(Error::EmptyInput("evaluation on an empty test set".into()));
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} inputs with {} labels",
            labels.len()
        )));
    }
    if class_mask.is_empty() {
        return Err(Error::EmptyInput("empty class mask".into()));
    }
    if class_mask.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "class mask must be strictly ascending, got {class_mask:?}"
        )));
    }
    if *class_mask.last().unwrap() >= model.num_classes {
        return Err(Error::InvalidConfig(format!(
            "class mask {class_mask:?} exceeds the {} model classes",
            model.num_classes
        )));
    }
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = inputs.gather(&idx);
        let logits = model.forward_eval(&chunk)?;
        for (row, &label) in idx.iter().map(|&i| logits.item(i - start)).zip(&labels[start..end]) {
            let mut best_class = class_mask[0];
            let mut best_val = row[class_mask[0]];
            for &c in &class_mask[1..] {
                if row[c] > best_val {
                    best_val = row[c];
                    best_class = c;
                }
            }
            if best_class == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / n as f64)
}

/// Swap-based per-layer profile from one pair of consecutive checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProfile {
    pub layer_names: Vec<String>,
    /// Accuracy shift on the previous task when the layer reverts.
    pub ms: Vec<f64>,
    /// Accuracy shift on the current task when the layer reverts.
    pub lp: Vec<f64>,
}

/// Profile every layer of `curr` against `prev` (the checkpoint one task
/// earlier). Both tasks must carry the same number of classes so the two
/// accuracy scales are comparable.
pub fn compute_profile<F: Scalar>(
    curr: &Model<F>,
    prev: &Model<F>,
    task_prev: &TaskSpec<F>,
    task_curr: &TaskSpec<F>,
    mask_prev: &[usize],
    mask_curr: &[usize],
) -> Result<LayerProfile> {
    curr.check_same_arch(prev)?;
    if task_prev.class_ids.len() != task_curr.class_ids.len() {
        return Err(Error::InvalidConfig(format!(
            "profiled tasks must have equal class counts ({} vs {})",
            task_prev.class_ids.len(),
            task_curr.class_ids.len()
        )));
    }
    let base_prev = evaluate_accuracy(curr, &task_prev.test_inputs, &task_prev.test_labels, mask_prev)?;
    let base_curr = evaluate_accuracy(curr, &task_curr.test_inputs, &task_curr.test_labels, mask_curr)?;
    let mut profile = LayerProfile {
        layer_names: Vec::new(),
        ms: Vec::new(),
        lp: Vec::new(),
    };
    let names: Vec<String> = curr.unit_names().map(String::from).collect();
    for name in names {
        let swapped = curr.swap_layer(prev, &name)?;
        let acc_prev =
            evaluate_accuracy(&swapped, &task_prev.test_inputs, &task_prev.test_labels, mask_prev)?;
        let acc_curr =
            evaluate_accuracy(&swapped, &task_curr.test_inputs, &task_curr.test_labels, mask_curr)?;
        profile.layer_names.push(name);
        profile.ms.push(acc_prev - base_prev);
        profile.lp.push(acc_curr - base_curr);
    }
    Ok(profile)
}

/// Mean and population standard deviation of profiles across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStats {
    pub layer_names: Vec<String>,
    pub ms_mean: Vec<f64>,
    pub ms_std: Vec<f64>,
    pub lp_mean: Vec<f64>,
    pub lp_std: Vec<f64>,
    pub runs: usize,
}

pub fn aggregate_profiles(profiles: &[LayerProfile]) -> Result<ProfileStats> {
    let Some(first) = profiles.first() else {
        return Err(Error::EmptyInput("no profiles to aggregate".into()));
    };
    for p in profiles {
        if p.layer_names != first.layer_names {
            return Err(Error::InconsistentProfiles(format!(
                "layer sets differ: {:?} vs {:?}",
                first.layer_names, p.layer_names
            )));
        }
    }
    fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, Float::sqrt(var))
    }

    let l = first.layer_names.len();
    let mut stats = ProfileStats {
        layer_names: first.layer_names.clone(),
        ms_mean: Vec::with_capacity(l),
        ms_std: Vec::with_capacity(l),
        lp_mean: Vec::with_capacity(l),
        lp_std: Vec::with_capacity(l),
        runs: profiles.len(),
    };
    for i in 0..l {
        let (m, s) = mean_std(profiles.iter().map(|p| p.ms[i]));
        stats.ms_mean.push(m);
        stats.ms_std.push(s);
        let (m, s) = mean_std(profiles.iter().map(|p| p.lp[i]));
        stats.lp_mean.push(m);
        stats.lp_std.push(s);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, Arch};

    #[test]
    fn masked_argmax_ignores_out_of_mask_classes() {
        // A head biased toward class 0 still predicts within the mask.
        let model = build_model::<f64>(Arch::Mlp, (1, 4, 4), 6, 5).unwrap();
        let x = Tensor::zeros(&[3, 1, 4, 4]);
        let full = evaluate_accuracy(&model, &x, &[0, 0, 0], &[0, 1, 2, 3, 4, 5]).unwrap();
        let masked = evaluate_accuracy(&model, &x, &[2, 2, 2], &[2, 3]).unwrap();
        assert!(full >= 0.0 && full <= 1.0);
        // Identical rows: masked prediction is constant, accuracy 0 or 1.
        assert!(masked == 0.0 || masked == 1.0);
    }

    #[test]
    fn bad_masks_are_rejected() {
        let model = build_model::<f64>(Arch::Mlp, (1, 4, 4), 4, 5).unwrap();
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(evaluate_accuracy(&model, &x, &[0], &[]).is_err());
        assert!(evaluate_accuracy(&model, &x, &[0], &[1, 1]).is_err());
        assert!(evaluate_accuracy(&model, &x, &[0], &[2, 1]).is_err());
        assert!(evaluate_accuracy(&model, &x, &[0], &[0, 9]).is_err());
    }

    #[test]
    fn aggregate_rejects_mismatched_layers() {
        let a = LayerProfile {
            layer_names: alloc::vec![String::from("x")],
            ms: alloc::vec![0.0],
            lp: alloc::vec![0.0],
        };
        let mut b = a.clone();
        b.layer_names[0] = String::from("y");
        assert!(aggregate_profiles(&[a.clone(), b]).is_err());
        assert!(aggregate_profiles(&[]).is_err());
        let s = aggregate_profiles(&[a.clone(), a]).unwrap();
        assert_eq!(s.runs, 2);
        assert_eq!(s.ms_std[0], 0.0);
    }
}
