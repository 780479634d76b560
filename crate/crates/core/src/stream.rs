//! Class-incremental task streams over image classification datasets.
//!
//! Classes are assigned to tasks contiguously in ascending label order, so
//! the stream layout is independent of the seed; the seed only shuffles
//! example order within each task (and thereby which examples survive
//! subsampling).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{shuffle, substream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Datasets the pipeline understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    SplitMnist,
    SplitCifar10,
}

impl DatasetName {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::SplitMnist => "split_mnist",
            DatasetName::SplitCifar10 => "split_cifar10",
        }
    }
}

impl core::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split_mnist" => Ok(DatasetName::SplitMnist),
            "split_cifar10" => Ok(DatasetName::SplitCifar10),
            other => Err(Error::InvalidConfig(format!("unknown dataset '{other}'"))),
        }
    }
}

/// Loaded dataset in raw pixel form (NCHW, one byte per pixel).
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub name: DatasetName,
    pub channels: usize,
    pub side: usize,
    pub num_classes: usize,
    pub train_images: Vec<u8>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<u8>,
    pub test_labels: Vec<u8>,
}

impl RawDataset {
    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }
    pub fn n_test(&self) -> usize {
        self.test_labels.len()
    }
    fn item_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn validate(&self) -> Result<()> {
        let il = self.item_len();
        if self.train_images.len() != self.n_train() * il
            || self.test_images.len() != self.n_test() * il
        {
            return Err(Error::ShapeMismatch(format!(
                "image bytes do not match label counts (train {} x {il}, test {} x {il})",
                self.n_train(),
                self.n_test()
            )));
        }
        for &l in self.train_labels.iter().chain(&self.test_labels) {
            if l as usize >= self.num_classes {
                return Err(Error::ShapeMismatch(format!(
                    "label {l} out of range for {} classes",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// How a dataset is cut into a task sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub dataset: DatasetName,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub eval_mode: EvalMode,
    pub seed: u64,
    /// Fraction of each task's examples kept after shuffling, in (0, 1].
    pub subsample_fraction: f64,
}

/// Evaluation protocol: task-incremental restricts predictions to the
/// evaluated task's classes, class-incremental to all classes seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Cil,
    Til,
}

impl core::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            EvalMode::Cil => "cil",
            EvalMode::Til => "til",
        })
    }
}

impl core::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cil" => Ok(EvalMode::Cil),
            "til" => Ok(EvalMode::Til),
            other => Err(Error::InvalidConfig(format!("unknown eval mode '{other}'"))),
        }
    }
}

/// One task: its classes and normalized train/test tensors. Labels stay
/// global (dataset class ids), never remapped per task.
#[derive(Debug, Clone)]
pub struct TaskSpec<F> {
    /// 1-based position in the stream.
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub train_inputs: Tensor<F>,
    pub train_labels: Vec<usize>,
    pub test_inputs: Tensor<F>,
    pub test_labels: Vec<usize>,
}

impl<F: Scalar> TaskSpec<F> {
    pub fn n_train(&self) -> usize {
        self.train_labels.len()
    }
    pub fn n_test(&self) -> usize {
        self.test_labels.len()
    }
}

#[derive(Debug, Clone)]
pub struct TaskStream<F> {
    pub config: StreamConfig,
    pub channels: usize,
    pub side: usize,
    pub num_classes: usize,
    /// Per-channel normalization constants from the full train split.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub tasks: Vec<TaskSpec<F>>,
}

/// Serializable stream description, written next to run outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub dataset: DatasetName,
    pub seed: u64,
    pub eval_mode: EvalMode,
    pub subsample_fraction: f64,
    pub normalization_mean: Vec<f64>,
    pub normalization_std: Vec<f64>,
    pub tasks: Vec<TaskManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
}

impl<F: Scalar> TaskStream<F> {
    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.side, self.side)
    }

    pub fn manifest(&self) -> StreamManifest {
        StreamManifest {
            dataset: self.config.dataset,
            seed: self.config.seed,
            eval_mode: self.config.eval_mode,
            subsample_fraction: self.config.subsample_fraction,
            normalization_mean: self.norm_mean.clone(),
            normalization_std: self.norm_std.clone(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskManifest {
                    task_id: t.task_id,
                    class_ids: t.class_ids.clone(),
                    n_train: t.n_train(),
                    n_test: t.n_test(),
                })
                .collect(),
        }
    }

    /// Classes a prediction may range over when evaluating `eval_task` on the
    /// checkpoint taken after `after_task`.
    pub fn eval_class_mask(&self, eval_task: usize, after_task: usize, mode: EvalMode) -> Vec<usize> {
        match mode {
            EvalMode::Til => self.tasks[eval_task - 1].class_ids.clone(),
            EvalMode::Cil => {
                let mut all: Vec<usize> = self
                    .tasks
                    .iter()
                    .take(after_task)
                    .flat_map(|t| t.class_ids.iter().copied())
                    .collect();
                all.sort_unstable();
                all.dedup();
                all
            }
        }
    }
}

/// Cut `raw` into a task stream. Deterministic: rebuilding with an identical
/// config yields element-wise identical tensors.
pub fn build_stream<F: Scalar>(raw: &RawDataset, config: &StreamConfig) -> Result<TaskStream<F>> {
    raw.validate()?;
    if config.dataset != raw.name {
        return Err(Error::InvalidConfig(format!(
            "config names dataset {} but raw data is {}",
            config.dataset, raw.name
        )));
    }
    if config.num_tasks == 0 || config.classes_per_task == 0 {
        return Err(Error::InvalidConfig(
            "num_tasks and classes_per_task must be positive".into(),
        ));
    }
    if config.num_tasks * config.classes_per_task > raw.num_classes {
        return Err(Error::InvalidConfig(format!(
            "{} tasks x {} classes exceed the {} dataset classes",
            config.num_tasks, config.classes_per_task, raw.num_classes
        )));
    }
    if !(config.subsample_fraction > 0.0 && config.subsample_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "subsample_fraction {} outside (0, 1]",
            config.subsample_fraction
        )));
    }

    // Per-channel statistics over the full train split, before any
    // subsampling, so they are a dataset property rather than a run property.
    let plane = raw.side * raw.side;
    let item = raw.channels * plane;
    let mut mean = vec![0.0f64; raw.channels];
    let mut sq = vec![0.0f64; raw.channels];
    let n_train = raw.n_train();
    if n_train == 0 {
        return Err(Error::EmptyInput("dataset has no training examples".into()));
    }
    for i in 0..n_train {
        let img = &raw.train_images[i * item..(i + 1) * item];
        for c in 0..raw.channels {
            for &p in &img[c * plane..(c + 1) * plane] {
                let v = p as f64 / 255.0;
                mean[c] += v;
                sq[c] += v * v;
            }
        }
    }
    let count = (n_train * plane) as f64;
    let mut std = vec![0.0f64; raw.channels];
    for c in 0..raw.channels {
        mean[c] /= count;
        let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
        // Degenerate channels normalize to zero instead of exploding.
        std[c] = Float::sqrt(var).max(1e-6);
    }

    let mut tasks = Vec::with_capacity(config.num_tasks);
    for t in 1..=config.num_tasks {
        let class_ids: Vec<usize> =
            ((t - 1) * config.classes_per_task..t * config.classes_per_task).collect();
        let (train_inputs, train_labels) = select_split(
            raw,
            &raw.train_images,
            &raw.train_labels,
            &class_ids,
            config.subsample_fraction,
            substream(config.seed, "shuffle-train", &[t as u64]),
            &mean,
            &std,
        )?;
        let (test_inputs, test_labels) = select_split(
            raw,
            &raw.test_images,
            &raw.test_labels,
            &class_ids,
            config.subsample_fraction,
            substream(config.seed, "shuffle-test", &[t as u64]),
            &mean,
            &std,
        )?;
        if train_labels.is_empty() || test_labels.is_empty() {
            return Err(Error::EmptyInput(format!(
                "task {t} has an empty split after subsampling"
            )));
        }
        tasks.push(TaskSpec {
            task_id: t,
            class_ids,
            train_inputs,
            train_labels,
            test_inputs,
            test_labels,
        });
    }

    Ok(TaskStream {
        config: config.clone(),
        channels: raw.channels,
        side: raw.side,
        num_classes: raw.num_classes,
        norm_mean: mean,
        norm_std: std,
        tasks,
    })
}

#[allow(clippy::too_many_arguments)]
fn select_split<F: Scalar>(
    raw: &RawDataset,
    images: &[u8],
    labels: &[u8],
    class_ids: &[usize],
    subsample: f64,
    mut rng: rand_chacha::ChaCha8Rng,
    mean: &[f64],
    std: &[f64],
) -> Result<(Tensor<F>, Vec<usize>)> {
    let mut indices: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| class_ids.contains(&(l as usize)))
        .map(|(i, _)| i)
        .collect();
    shuffle(&mut indices, &mut rng);
    let keep = ((indices.len() as f64) * subsample).ceil() as usize;
    indices.truncate(keep.max(1).min(indices.len()));

    let plane = raw.side * raw.side;
    let item = raw.channels * plane;
    let mut data = Vec::with_capacity(indices.len() * item);
    let mut out_labels = Vec::with_capacity(indices.len());
    for &i in &indices {
        let img = &images[i * item..(i + 1) * item];
        for c in 0..raw.channels {
            let (m, s) = (mean[c], std[c]);
            for &p in &img[c * plane..(c + 1) * plane] {
                data.push(F::from_f64((p as f64 / 255.0 - m) / s));
            }
        }
        out_labels.push(labels[i] as usize);
    }
    let inputs = Tensor::from_vec(&[indices.len(), raw.channels, raw.side, raw.side], data)?;
    Ok((inputs, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn tiny_raw(name: DatasetName, classes: usize, per_class: usize, side: usize) -> RawDataset {
        let channels = match name {
            DatasetName::SplitMnist => 1,
            DatasetName::SplitCifar10 => 3,
        };
        let item = channels * side * side;
        let n = classes * per_class;
        let mut images = vec![0u8; n * item];
        let mut labels = vec![0u8; n];
        for i in 0..n {
            let class = i % classes;
            labels[i] = class as u8;
            for (j, px) in images[i * item..(i + 1) * item].iter_mut().enumerate() {
                *px = ((class * 40 + i * 7 + j * 13) % 256) as u8;
            }
        }
        RawDataset {
            name,
            channels,
            side,
            num_classes: classes,
            train_images: images.clone(),
            train_labels: labels.clone(),
            test_images: images,
            test_labels: labels,
        }
    }

    fn cfg(seed: u64) -> StreamConfig {
        StreamConfig {
            dataset: DatasetName::SplitMnist,
            num_tasks: 3,
            classes_per_task: 2,
            eval_mode: EvalMode::Til,
            seed,
            subsample_fraction: 1.0,
        }
    }

    #[test]
    fn partition_is_contiguous_and_seed_independent() {
        let raw = tiny_raw(DatasetName::SplitMnist, 6, 8, 8);
        let a = build_stream::<f32>(&raw, &cfg(1)).unwrap();
        let b = build_stream::<f32>(&raw, &cfg(2)).unwrap();
        for (t, task) in a.tasks.iter().enumerate() {
            assert_eq!(task.class_ids, vec![2 * t, 2 * t + 1]);
            assert_eq!(task.class_ids, b.tasks[t].class_ids);
        }
    }

    #[test]
    fn rebuild_is_identical_and_seed_shuffles_order() {
        let raw = tiny_raw(DatasetName::SplitMnist, 6, 8, 8);
        let a = build_stream::<f32>(&raw, &cfg(1)).unwrap();
        let b = build_stream::<f32>(&raw, &cfg(1)).unwrap();
        let c = build_stream::<f32>(&raw, &cfg(9)).unwrap();
        assert_eq!(a.tasks[0].train_inputs.data(), b.tasks[0].train_inputs.data());
        assert_eq!(a.tasks[0].train_labels, b.tasks[0].train_labels);
        // Same multiset of labels regardless of seed, different order.
        let mut la = a.tasks[0].train_labels.clone();
        let mut lc = c.tasks[0].train_labels.clone();
        assert_ne!(a.tasks[0].train_inputs.data(), c.tasks[0].train_inputs.data());
        la.sort_unstable();
        lc.sort_unstable();
        assert_eq!(la, lc);
    }

    #[test]
    fn subsample_keeps_ceil_fraction() {
        let raw = tiny_raw(DatasetName::SplitMnist, 6, 10, 8);
        let mut c = cfg(1);
        c.subsample_fraction = 0.25;
        let s = build_stream::<f32>(&raw, &c).unwrap();
        // 2 classes x 10 examples = 20; ceil(0.25 * 20) = 5.
        assert_eq!(s.tasks[0].n_train(), 5);
    }

    #[test]
    fn masks_follow_protocol() {
        let raw = tiny_raw(DatasetName::SplitMnist, 6, 8, 8);
        let s = build_stream::<f32>(&raw, &cfg(1)).unwrap();
        assert_eq!(s.eval_class_mask(2, 3, EvalMode::Til), vec![2, 3]);
        assert_eq!(s.eval_class_mask(2, 3, EvalMode::Cil), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(s.eval_class_mask(1, 2, EvalMode::Cil), vec![0, 1, 2, 3]);
    }

    #[test]
    fn oversized_partition_is_rejected() {
        let raw = tiny_raw(DatasetName::SplitMnist, 6, 8, 8);
        let mut c = cfg(1);
        c.num_tasks = 4;
        assert!(build_stream::<f32>(&raw, &c).is_err());
    }

    #[test]
    fn normalization_is_a_dataset_property() {
        let raw = tiny_raw(DatasetName::SplitMnist, 6, 8, 8);
        let mut c1 = cfg(1);
        c1.subsample_fraction = 0.5;
        let a = build_stream::<f32>(&raw, &c1).unwrap();
        let b = build_stream::<f32>(&raw, &cfg(2)).unwrap();
        assert_eq!(a.norm_mean, b.norm_mean);
        assert_eq!(a.norm_std, b.norm_std);
    }
}
