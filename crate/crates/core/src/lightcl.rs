//! Memory-light continual learning: freeze a profiled prefix, regulate the
//! feature patterns that matter, train the rest with plain SGD.
//!
//! Per task: a few memory samples are drawn once, feature standards are
//! captured from the previous model at the important positions, every step
//! adds a quadratic pull of current features toward those standards, and the
//! position set is extended from activations of a training batch at task end.

use alloc::collections::{BTreeMap, BTreeSet};
use num_traits::Float;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::cross_entropy;
use crate::metrics::{average_accuracy, fill_matrix};
use crate::model::{FreezeConfig, Model, ParamBundle};
use crate::outcome::{MethodTag, RunOutcome, TaskSummary};
use crate::rng::{sample_distinct, shuffle, substream};
use crate::scalar::Scalar;
use crate::stream::{TaskSpec, TaskStream};
use crate::tensor::Tensor;

// ─── Positions and feature standards ────────────────────────────────────────

/// One regulated feature map: a layer name and a channel index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub layer: String,
    pub channel: usize,
}

/// Ordered set of regulated positions; iteration order is deterministic.
pub type PositionSet = BTreeSet<Position>;

/// Memory samples of one task: inputs only, regulation needs no labels.
#[derive(Debug, Clone)]
pub struct MemorySamples<F> {
    pub task_id: usize,
    /// Row indices into the task's train tensor, in draw order.
    pub indices: Vec<usize>,
    pub inputs: Tensor<F>,
}

/// Reference activations captured from the previous model over the memory
/// samples; tensors are [m x H x W] per position.
#[derive(Debug, Clone)]
pub struct FeatureStandards<F> {
    pub task_id: usize,
    pub map: BTreeMap<Position, Tensor<F>>,
}

/// Draw `mem_size` distinct training examples of `task` (all of them when the
/// task is smaller). One draw per task, keyed by the run seed.
pub fn draw_memory_samples<F: Scalar>(
    task: &TaskSpec<F>,
    mem_size: usize,
    seed: u64,
) -> Result<MemorySamples<F>> {
    if mem_size == 0 {
        return Err(Error::InvalidConfig("mem_size must be positive".into()));
    }
    let n = task.n_train();
    let take = mem_size.min(n);
    let mut rng = substream(seed, "mem", &[task.task_id as u64]);
    let indices = sample_distinct(&mut rng, n, take);
    let inputs = task.train_inputs.gather(&indices);
    Ok(MemorySamples {
        task_id: task.task_id,
        indices,
        inputs,
    })
}

/// Channel `ch` of a [N x C x H x W] slot as [N x H x W]; dense slots
/// [N x C] yield [N x 1 x 1].
fn extract_channel<F: Scalar>(slot: &Tensor<F>, ch: usize) -> Result<Tensor<F>> {
    match *slot.shape() {
        [n, c, h, w] => {
            if ch >= c {
                return Err(Error::ShapeMismatch(format!("channel {ch} of {c}")));
            }
            let mut out = Tensor::zeros(&[n, h, w]);
            for i in 0..n {
                out.item_mut(i)
                    .copy_from_slice(&slot.item(i)[ch * h * w..(ch + 1) * h * w]);
            }
            Ok(out)
        }
        [n, c] => {
            if ch >= c {
                return Err(Error::ShapeMismatch(format!("channel {ch} of {c}")));
            }
            let mut out = Tensor::zeros(&[n, 1, 1]);
            for i in 0..n {
                out.item_mut(i)[0] = slot.item(i)[ch];
            }
            Ok(out)
        }
        _ => Err(Error::ShapeMismatch(format!(
            "cannot capture channels of shape {:?}",
            slot.shape()
        ))),
    }
}

/// Write `grad` ([N x H x W]) into channel `ch` of a [N x C x H x W] (or
/// [N x C]) buffer, accumulating.
fn embed_channel_acc<F: Scalar>(buf: &mut Tensor<F>, ch: usize, grad: &Tensor<F>) {
    match *buf.shape() {
        [n, _, h, w] => {
            for i in 0..n {
                let dst = &mut buf.item_mut(i)[ch * h * w..(ch + 1) * h * w];
                for (d, &g) in dst.iter_mut().zip(grad.item(i)) {
                    *d += g;
                }
            }
        }
        [n, _] => {
            for i in 0..n {
                buf.item_mut(i)[ch] += grad.item(i)[0];
            }
        }
        _ => unreachable!("slot shapes are validated at capture"),
    }
}

// ─── Selection ──────────────────────────────────────────────────────────────

/// Rank channels of every trainable non-head layer by the l1 norm of their
/// activations over `batch` and keep the top `ceil(ratio * channels)` per
/// layer (ties resolve to the lower channel index).
pub fn select_important_positions<F: Scalar>(
    model: &Model<F>,
    batch: &Tensor<F>,
    ratio: f64,
) -> Result<PositionSet> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("ratio {ratio} outside (0, 1]")));
    }
    let eligible: Vec<usize> = (0..model.units().len())
        .filter(|&i| model.is_trainable(i) && i != model.head_unit())
        .collect();
    if eligible.is_empty() {
        return Ok(PositionSet::new());
    }
    let trace = model.forward_capture(batch)?;
    let mut set = PositionSet::new();
    for i in eligible {
        let slot = trace.slot(model.unit_output_slot(i));
        let channels = model.units()[i].out_channels();
        let scores = channel_l1_scores(slot, channels)?;
        let keep = top_k_channels(&scores, ratio_count(ratio, channels));
        for ch in keep {
            set.insert(Position {
                layer: model.units()[i].name.clone(),
                channel: ch,
            });
        }
    }
    Ok(set)
}

pub(crate) fn ratio_count(ratio: f64, channels: usize) -> usize {
    let k = Float::ceil(ratio * channels as f64) as usize;
    k.clamp(1, channels)
}

/// Per-channel l1 norm summed over batch and spatial positions.
pub(crate) fn channel_l1_scores<F: Scalar>(slot: &Tensor<F>, channels: usize) -> Result<Vec<f64>> {
    let mut scores = alloc::vec![0.0f64; channels];
    match *slot.shape() {
        [n, c, h, w] if c == channels => {
            let plane = h * w;
            for i in 0..n {
                let row = slot.item(i);
                for (ch, s) in scores.iter_mut().enumerate() {
                    for &v in &row[ch * plane..(ch + 1) * plane] {
                        *s += v.to_f64().abs();
                    }
                }
            }
        }
        [n, c] if c == channels => {
            for i in 0..n {
                for (s, &v) in scores.iter_mut().zip(slot.item(i)) {
                    *s += v.to_f64().abs();
                }
            }
        }
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "activation shape {:?} does not expose {channels} channels",
                slot.shape()
            )))
        }
    }
    Ok(scores)
}

/// Indices of the `k` largest scores, descending; equal scores keep the
/// lower index first.
pub(crate) fn top_k_channels(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Union of two position sets (the per-task extension step).
pub fn union_positions(a: &PositionSet, b: &PositionSet) -> PositionSet {
    a.union(b).cloned().collect()
}

// ─── Feature standards and regulation ───────────────────────────────────────

/// Capture reference activations of `model` (the previous checkpoint) at
/// `positions` over the memory samples. Fails on an empty position set so
/// callers must explicitly skip regulation instead of silently training
/// without it.
pub fn capture_feature_standards<F: Scalar>(
    model: &Model<F>,
    mem: &MemorySamples<F>,
    positions: &PositionSet,
) -> Result<FeatureStandards<F>> {
    if positions.is_empty() {
        return Err(Error::EmptyPositions);
    }
    validate_positions(model, positions)?;
    let trace = model.forward_capture(&mem.inputs)?;
    let mut map = BTreeMap::new();
    for pos in positions {
        let unit = model.unit_index(&pos.layer)?;
        let slot = trace.slot(model.unit_output_slot(unit));
        map.insert(pos.clone(), extract_channel(slot, pos.channel)?);
    }
    Ok(FeatureStandards {
        task_id: mem.task_id,
        map,
    })
}

fn validate_positions<F: Scalar>(model: &Model<F>, positions: &PositionSet) -> Result<()> {
    for pos in positions {
        let unit = model.unit_index(&pos.layer)?;
        let channels = model.units()[unit].out_channels();
        if pos.channel >= channels {
            return Err(Error::PositionOutOfRange {
                layer: pos.layer.clone(),
                channel: pos.channel,
                channels,
            });
        }
    }
    Ok(())
}

/// Quadratic feature-drift penalty: `beta * sum((FM - FS)^2)` over all
/// positions and elements (a pure sum, not a mean). Position sets and shapes
/// of `current` and `standards` must match exactly.
pub fn regulation_loss<F: Scalar>(
    current: &BTreeMap<Position, Tensor<F>>,
    standards: &FeatureStandards<F>,
    beta: f64,
) -> Result<F> {
    if current.len() != standards.map.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} current features vs {} standards",
            current.len(),
            standards.map.len()
        )));
    }
    let mut total = F::zero();
    for (pos, fs) in &standards.map {
        let fm = current.get(pos).ok_or_else(|| {
            Error::ShapeMismatch(format!("no current feature for {}:{}", pos.layer, pos.channel))
        })?;
        if fm.shape() != fs.shape() {
            return Err(Error::ShapeMismatch(format!(
                "feature shape {:?} vs standard {:?} at {}:{}",
                fm.shape(),
                fs.shape(),
                pos.layer,
                pos.channel
            )));
        }
        for (&a, &b) in fm.iter().zip(fs.iter()) {
            let d = a - b;
            total += d * d;
        }
    }
    Ok(F::from_f64(beta) * total)
}

// ─── Configuration ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// The initial model is treated as pretrained: the prefix freezes before
    /// the first task and regulation starts once positions exist.
    Pretrained,
    /// The first task trains all layers without regulation, then the prefix
    /// freezes for the remaining tasks.
    Scratch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionBatch {
    /// Extend positions from the first training batch of the task.
    First,
    /// Extend positions from the last full training batch of the task.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightClConfig {
    pub mode: TrainMode,
    /// Freeze boundary layer; frozen prefix is everything up to and
    /// including it.
    pub fz_layer: Option<String>,
    /// Frozen normalization keeps running statistics fixed during training.
    pub freeze_norm_stats: bool,
    /// Fraction of channels regulated per layer.
    pub ratio: f64,
    /// Regulation strength.
    pub beta: f64,
    /// Memory samples per task.
    pub mem_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub selection_batch: SelectionBatch,
    /// Disabling leaves prefix freezing only (the ablation baseline).
    pub regulation: bool,
    pub seed: u64,
}

impl Default for LightClConfig {
    fn default() -> Self {
        LightClConfig {
            mode: TrainMode::Scratch,
            fz_layer: None,
            freeze_norm_stats: true,
            ratio: 0.15,
            beta: 2e-4,
            mem_size: 15,
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            selection_batch: SelectionBatch::Last,
            regulation: true,
            seed: 0,
        }
    }
}

impl LightClConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ratio {} outside (0, 1]",
                self.ratio
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!("negative beta {}", self.beta)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "negative learning rate {}",
                self.learning_rate
            )));
        }
        if self.regulation && self.mem_size == 0 {
            return Err(Error::InvalidConfig(
                "regulation needs mem_size >= 1".into(),
            ));
        }
        Ok(())
    }

    fn freeze_config(&self) -> FreezeConfig {
        FreezeConfig {
            fz_layer: self.fz_layer.clone(),
            freeze_norm_stats: self.freeze_norm_stats,
        }
    }
}

// ─── Training ───────────────────────────────────────────────────────────────

/// Scalars and the extension set produced by one task phase.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub summary: TaskSummary,
    pub new_positions: PositionSet,
}

/// Regulation loss on `mem_inputs` plus its parameter gradient, accumulated
/// into `grads`. Features come from a capture pass; each regulated channel
/// seeds the backward walk with `2 * beta * (FM - FS)` at its output slot.
pub fn regulation_gradient<F: Scalar>(
    model: &Model<F>,
    mem_inputs: &Tensor<F>,
    standards: &FeatureStandards<F>,
    beta: f64,
    grads: &mut ParamBundle<F>,
) -> Result<f64> {
    let mem_trace = model.forward_capture(mem_inputs)?;
    let mut current = BTreeMap::new();
    let mut seeds: BTreeMap<usize, Tensor<F>> = BTreeMap::new();
    let two_beta = F::from_f64(2.0 * beta);
    for (pos, fs) in &standards.map {
        let unit = model.unit_index(&pos.layer)?;
        let slot_id = model.unit_output_slot(unit);
        let fm = extract_channel(mem_trace.slot(slot_id), pos.channel)?;
        let mut grad = Tensor::zeros(fm.shape());
        for ((g, &a), &b) in grad.data_mut().iter_mut().zip(fm.iter()).zip(fs.iter()) {
            *g = two_beta * (a - b);
        }
        let seed = seeds
            .entry(slot_id)
            .or_insert_with(|| Tensor::zeros(mem_trace.slot(slot_id).shape()));
        embed_channel_acc(seed, pos.channel, &grad);
        current.insert(pos.clone(), fm);
    }
    let value = regulation_loss(&current, standards, beta)?.to_f64();
    model.backward(&mem_trace, seeds.into_iter().collect(), grads)?;
    Ok(value)
}

/// Train one task in place. `model` enters as the previous checkpoint
/// (feature standards are captured from it before the first step) and leaves
/// as the new checkpoint. In scratch mode the first task trains every layer
/// and applies the prefix freeze afterwards, before position selection.
pub fn train_task<F: Scalar>(
    model: &mut Model<F>,
    task: &TaskSpec<F>,
    positions: &PositionSet,
    cfg: &LightClConfig,
) -> Result<TaskOutcome> {
    cfg.validate()?;
    let pretrain_phase = cfg.mode == TrainMode::Scratch && task.task_id == 1;
    let regulate = cfg.regulation && !positions.is_empty() && !pretrain_phase;

    let standards = if regulate {
        let mem = draw_memory_samples(task, cfg.mem_size, cfg.seed)?;
        Some((
            capture_feature_standards(model, &mem, positions)?,
            mem,
        ))
    } else {
        None
    };

    let n = task.n_train();
    let lr = F::from_f64(cfg.learning_rate);
    let mut grads = ParamBundle::zeros_like(model);
    let mut last_loss = None;
    let mut last_reg = None;
    let mut steps = 0usize;
    let mut first_batch: Option<Vec<usize>> = None;
    let mut last_full_batch: Option<Vec<usize>> = None;
    let mut last_batch: Option<Vec<usize>> = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = substream(cfg.seed, "batch", &[task.task_id as u64, epoch as u64]);
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs = task.train_inputs.gather(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| task.train_labels[i]).collect();

            let trace = model.forward_train(&inputs)?;
            let (loss_c, dlogits) = cross_entropy(trace.logits(), &labels)?;
            grads.zero();
            model.backward(&trace, alloc::vec![(model.logits_slot(), dlogits)], &mut grads)?;

            let mut reg_value = 0.0f64;
            if let Some((standards, mem)) = &standards {
                reg_value = regulation_gradient(model, &mem.inputs, standards, cfg.beta, &mut grads)?;
            }

            let total = loss_c + reg_value;
            if !total.is_finite() {
                return Err(Error::NonFinite {
                    task_id: task.task_id,
                    step: steps,
                    loss: total,
                });
            }
            model.sgd_step(&grads, lr);

            steps += 1;
            last_loss = Some(loss_c);
            last_reg = regulate.then_some(reg_value);
            if first_batch.is_none() {
                first_batch = Some(chunk.to_vec());
            }
            if chunk.len() == cfg.batch_size {
                last_full_batch = Some(chunk.to_vec());
            }
            last_batch = Some(chunk.to_vec());
        }
    }

    if pretrain_phase {
        model.freeze_prefix(&cfg.freeze_config())?;
    }

    // Position extension from a training batch of this task. With zero steps
    // the task's leading examples stand in so the set still extends.
    let sel = match cfg.selection_batch {
        SelectionBatch::First => first_batch,
        SelectionBatch::Last => last_full_batch.or(last_batch),
    }
    .unwrap_or_else(|| (0..n.min(cfg.batch_size)).collect());
    let new_positions = select_important_positions(model, &task.train_inputs.gather(&sel), cfg.ratio)?;

    Ok(TaskOutcome {
        summary: TaskSummary {
            task_id: task.task_id,
            steps,
            train_loss_final: last_loss,
            reg_loss_final: last_reg,
        },
        new_positions,
    })
}

/// Checkpointed state needed to continue a partially finished run.
#[derive(Debug, Clone)]
pub struct ResumeState<F> {
    /// Checkpoints of completed tasks, in task order.
    pub completed: Vec<Model<F>>,
    /// Position set accumulated over the completed tasks.
    pub positions: PositionSet,
    pub per_task: Vec<TaskSummary>,
    pub i_size_trajectory: Vec<usize>,
}

/// Run the full task sequence from `initial`, or continue a resumed run.
pub fn run_continual<F: Scalar>(
    initial: Model<F>,
    stream: &TaskStream<F>,
    cfg: &LightClConfig,
    resume: Option<ResumeState<F>>,
) -> Result<RunOutcome<F>> {
    cfg.validate()?;
    let mut checkpoints: Vec<Model<F>>;
    let mut positions: PositionSet;
    let mut per_task: Vec<TaskSummary>;
    let mut i_sizes: Vec<usize>;
    let mut model;

    match resume {
        Some(state) => {
            if state.completed.is_empty() || state.completed.len() >= stream.tasks.len() + 1 {
                return Err(Error::InvalidConfig(format!(
                    "resume state with {} checkpoints for a {}-task stream",
                    state.completed.len(),
                    stream.tasks.len()
                )));
            }
            model = state.completed.last().unwrap().clone();
            checkpoints = state.completed;
            positions = state.positions;
            per_task = state.per_task;
            i_sizes = state.i_size_trajectory;
        }
        None => {
            model = initial;
            if cfg.mode == TrainMode::Pretrained {
                model.freeze_prefix(&cfg.freeze_config())?;
            }
            checkpoints = Vec::with_capacity(stream.tasks.len());
            positions = PositionSet::new();
            per_task = Vec::new();
            i_sizes = Vec::new();
        }
    }

    for task in stream.tasks.iter().skip(checkpoints.len()) {
        let outcome = train_task(&mut model, task, &positions, cfg)?;
        positions = union_positions(&positions, &outcome.new_positions);
        per_task.push(outcome.summary);
        i_sizes.push(positions.len());
        checkpoints.push(model.clone());
    }

    let matrix = fill_matrix(&checkpoints, stream, stream.config.eval_mode)?;
    let aa = average_accuracy(&matrix, stream.tasks.len())?;
    Ok(RunOutcome {
        method: MethodTag::Lightcl,
        checkpoints,
        matrix,
        aa,
        per_task,
        i_size_trajectory: i_sizes,
        positions,
    })
}
