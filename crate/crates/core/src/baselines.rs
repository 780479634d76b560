//! Reference trainers the memory-light method is compared against: naive
//! sequential SGD, joint training, elastic weight consolidation, and
//! experience replay. All train every layer with plain SGD.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::cross_entropy;
use crate::lightcl::PositionSet;
use crate::metrics::{average_accuracy, fill_matrix, AccuracyMatrix};
use crate::model::{Model, ParamBundle};
use crate::outcome::{MethodTag, RunOutcome, TaskSummary};
use crate::profile::evaluate_accuracy;
use crate::rng::{sample_distinct, shuffle, substream};
use crate::scalar::Scalar;
use crate::stream::{TaskSpec, TaskStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "negative learning rate {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Plain cross-entropy step over one batch; returns the loss.
fn ce_step<F: Scalar>(
    model: &mut Model<F>,
    inputs: &Tensor<F>,
    labels: &[usize],
    grads: &mut ParamBundle<F>,
    lr: F,
    task_id: usize,
    step: usize,
) -> Result<f64> {
    let trace = model.forward_train(inputs)?;
    let (loss, dlogits) = cross_entropy(trace.logits(), labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            task_id,
            step,
            loss,
        });
    }
    grads.zero();
    model.backward(&trace, alloc::vec![(model.logits_slot(), dlogits)], grads)?;
    model.sgd_step(grads, lr);
    Ok(loss)
}

fn finish_run<F: Scalar>(
    method: MethodTag,
    checkpoints: Vec<Model<F>>,
    per_task: Vec<TaskSummary>,
    stream: &TaskStream<F>,
) -> Result<RunOutcome<F>> {
    let matrix = fill_matrix(&checkpoints, stream, stream.config.eval_mode)?;
    let aa = average_accuracy(&matrix, stream.tasks.len())?;
    Ok(RunOutcome {
        method,
        checkpoints,
        matrix,
        aa,
        per_task,
        i_size_trajectory: Vec::new(),
        positions: PositionSet::new(),
    })
}

// ─── Naive sequential SGD ───────────────────────────────────────────────────

pub fn train_sgd<F: Scalar>(
    mut model: Model<F>,
    stream: &TaskStream<F>,
    cfg: &BaselineConfig,
) -> Result<RunOutcome<F>> {
    cfg.validate()?;
    let lr = F::from_f64(cfg.learning_rate);
    let mut grads = ParamBundle::zeros_like(&model);
    let mut checkpoints = Vec::new();
    let mut per_task = Vec::new();
    for task in &stream.tasks {
        let mut last_loss = None;
        let mut steps = 0usize;
        for epoch in 0..cfg.epochs {
            let mut order: Vec<usize> = (0..task.n_train()).collect();
            let mut rng = substream(cfg.seed, "batch", &[task.task_id as u64, epoch as u64]);
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let inputs = task.train_inputs.gather(chunk);
                let labels: Vec<usize> = chunk.iter().map(|&i| task.train_labels[i]).collect();
                last_loss = Some(ce_step(&mut model, &inputs, &labels, &mut grads, lr, task.task_id, steps)?);
                steps += 1;
            }
        }
        per_task.push(TaskSummary {
            task_id: task.task_id,
            steps,
            train_loss_final: last_loss,
            reg_loss_final: None,
        });
        checkpoints.push(model.clone());
    }
    finish_run(MethodTag::Sgd, checkpoints, per_task, stream)
}

// ─── Joint training (upper reference) ───────────────────────────────────────

/// One phase over the shuffled union of all task training sets. The tasks
/// contribute equally sized class groups, so plain shuffling is
/// class-balanced in expectation. Task id 0 labels the single phase.
pub fn train_joint<F: Scalar>(
    mut model: Model<F>,
    stream: &TaskStream<F>,
    cfg: &BaselineConfig,
) -> Result<RunOutcome<F>> {
    cfg.validate()?;
    let lr = F::from_f64(cfg.learning_rate);
    let mut grads = ParamBundle::zeros_like(&model);

    // Union of (task index, row) pairs.
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (ti, task) in stream.tasks.iter().enumerate() {
        for i in 0..task.n_train() {
            pool.push((ti, i));
        }
    }
    let mut last_loss = None;
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut rng = substream(cfg.seed, "batch", &[0, epoch as u64]);
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut data = Vec::new();
            let mut labels = Vec::with_capacity(chunk.len());
            for &p in chunk {
                let (ti, i) = pool[p];
                data.extend_from_slice(stream.tasks[ti].train_inputs.item(i));
                labels.push(stream.tasks[ti].train_labels[i]);
            }
            let (c, h, w) = stream.input_shape();
            let inputs = Tensor::from_vec(&[chunk.len(), c, h, w], data)?;
            last_loss = Some(ce_step(&mut model, &inputs, &labels, &mut grads, lr, 0, steps)?);
            steps += 1;
        }
    }

    // Single column covering every task at the final (only) checkpoint.
    let mode = stream.config.eval_mode;
    let t_all = stream.tasks.len();
    let mut col = Vec::with_capacity(t_all);
    for eval in 1..=t_all {
        let task = &stream.tasks[eval - 1];
        let mask = stream.eval_class_mask(eval, t_all, mode);
        col.push(evaluate_accuracy(&model, &task.test_inputs, &task.test_labels, &mask)?);
    }
    let mut matrix = AccuracyMatrix::new(mode);
    matrix.columns.push(col);
    let aa = average_accuracy(&matrix, t_all)?;
    Ok(RunOutcome {
        method: MethodTag::Joint,
        checkpoints: alloc::vec![model],
        matrix,
        aa,
        per_task: alloc::vec![TaskSummary {
            task_id: 0,
            steps,
            train_loss_final: last_loss,
            reg_loss_final: None,
        }],
        i_size_trajectory: Vec::new(),
        positions: PositionSet::new(),
    })
}

// ─── Elastic weight consolidation ───────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcConfig {
    pub base: BaselineConfig,
    /// Penalty strength.
    pub lambda: f64,
    /// Examples used for the per-task Fisher estimate.
    pub fisher_samples: usize,
}

/// Per-parameter importance weights with the anchor they were taken at.
#[derive(Debug, Clone)]
pub struct ImportanceMap<F> {
    pub weights: ParamBundle<F>,
    pub anchor: ParamBundle<F>,
}

pub fn snapshot_params<F: Scalar>(model: &Model<F>) -> ParamBundle<F> {
    let mut bundle = ParamBundle::zeros_like(model);
    for i in 0..model.units().len() {
        for (dst, src) in bundle.units[i].iter_mut().zip(model.unit_param_slices(i)) {
            dst.copy_from_slice(src);
        }
    }
    bundle
}

/// Empirical Fisher diagonal: mean squared per-sample gradient of the
/// log-likelihood of the true label, at the model's running statistics.
pub fn fisher_diagonal<F: Scalar>(
    model: &Model<F>,
    task: &TaskSpec<F>,
    sample_count: usize,
    seed: u64,
) -> Result<ParamBundle<F>> {
    let n = task.n_train();
    let take = sample_count.min(n).max(1);
    let mut rng = substream(seed, "fisher", &[task.task_id as u64]);
    let picks = sample_distinct(&mut rng, n, take);
    let mut fisher = ParamBundle::zeros_like(model);
    let mut g = ParamBundle::zeros_like(model);
    for &i in &picks {
        let x = task.train_inputs.gather(&[i]);
        let trace = model.forward_eval_trace(&x)?;
        let (_, dlogits) = cross_entropy(trace.logits(), &[task.train_labels[i]])?;
        g.zero();
        model.backward(&trace, alloc::vec![(model.logits_slot(), dlogits)], &mut g)?;
        fisher.add_squared(&g);
    }
    fisher.scale(F::from_f64(1.0 / take as f64));
    Ok(fisher)
}

/// Quadratic penalty value and gradient accumulation:
/// `(lambda / 2) * sum(F * (theta - anchor)^2)`.
pub fn ewc_penalty<F: Scalar>(
    model: &Model<F>,
    importance: &ImportanceMap<F>,
    lambda: f64,
    grads: &mut ParamBundle<F>,
) -> f64 {
    let lam = F::from_f64(lambda);
    let half = F::from_f64(0.5 * lambda);
    let mut value = F::zero();
    for i in 0..model.units().len() {
        for (t, param) in model.unit_param_slices(i).into_iter().enumerate() {
            let weight = &importance.weights.units[i][t];
            let anchor = &importance.anchor.units[i][t];
            let g = &mut grads.units[i][t];
            for j in 0..param.len() {
                let d = param[j] - anchor[j];
                value += half * weight[j] * d * d;
                g[j] += lam * weight[j] * d;
            }
        }
    }
    value.to_f64()
}

pub fn train_ewc<F: Scalar>(
    mut model: Model<F>,
    stream: &TaskStream<F>,
    cfg: &EwcConfig,
) -> Result<RunOutcome<F>> {
    cfg.base.validate()?;
    if cfg.lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("negative lambda {}", cfg.lambda)));
    }
    let lr = F::from_f64(cfg.base.learning_rate);
    let mut grads = ParamBundle::zeros_like(&model);
    let mut importance: Option<ImportanceMap<F>> = None;
    let mut checkpoints = Vec::new();
    let mut per_task = Vec::new();

    for task in &stream.tasks {
        let mut last_loss = None;
        let mut last_penalty = None;
        let mut steps = 0usize;
        for epoch in 0..cfg.base.epochs {
            let mut order: Vec<usize> = (0..task.n_train()).collect();
            let mut rng = substream(cfg.base.seed, "batch", &[task.task_id as u64, epoch as u64]);
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(cfg.base.batch_size) {
                let inputs = task.train_inputs.gather(chunk);
                let labels: Vec<usize> = chunk.iter().map(|&i| task.train_labels[i]).collect();
                let trace = model.forward_train(&inputs)?;
                let (loss, dlogits) = cross_entropy(trace.logits(), &labels)?;
                grads.zero();
                model.backward(&trace, alloc::vec![(model.logits_slot(), dlogits)], &mut grads)?;
                let penalty = match &importance {
                    Some(imp) => ewc_penalty(&model, imp, cfg.lambda, &mut grads),
                    None => 0.0,
                };
                if !(loss + penalty).is_finite() {
                    return Err(Error::NonFinite {
                        task_id: task.task_id,
                        step: steps,
                        loss: loss + penalty,
                    });
                }
                model.sgd_step(&grads, lr);
                last_loss = Some(loss);
                last_penalty = importance.is_some().then_some(penalty);
                steps += 1;
            }
        }
        // Accumulate this task's Fisher on the trained model; the anchor is
        // always the latest post-task parameter vector.
        let fisher = fisher_diagonal(&model, task, cfg.fisher_samples, cfg.base.seed)?;
        let anchor = snapshot_params(&model);
        importance = Some(match importance.take() {
            Some(mut imp) => {
                imp.weights.add_scaled(&fisher, F::one());
                imp.anchor = anchor;
                imp
            }
            None => ImportanceMap {
                weights: fisher,
                anchor,
            },
        });
        per_task.push(TaskSummary {
            task_id: task.task_id,
            steps,
            train_loss_final: last_loss,
            reg_loss_final: last_penalty,
        });
        checkpoints.push(model.clone());
    }
    finish_run(MethodTag::Ewc, checkpoints, per_task, stream)
}

// ─── Experience replay ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErConfig {
    pub base: BaselineConfig,
    /// Stored examples across the whole run.
    pub capacity: usize,
}

/// Reservoir-sampled example store. After `n` insertions into capacity `c`,
/// every seen example is retained with probability `c / max(n, c)`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<F> {
    capacity: usize,
    item_shape: Vec<usize>,
    items: Vec<(Vec<F>, usize, usize)>,
    insertions: u64,
}

impl<F: Scalar> ReplayBuffer<F> {
    pub fn new(capacity: usize, item_shape: &[usize]) -> Self {
        ReplayBuffer {
            capacity,
            item_shape: item_shape.to_vec(),
            items: Vec::new(),
            insertions: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    pub fn insert(&mut self, input: &[F], label: usize, source_task: usize, rng: &mut ChaCha8Rng) {
        self.insertions += 1;
        if self.items.len() < self.capacity {
            self.items.push((input.to_vec(), label, source_task));
            return;
        }
        // Classic reservoir replacement: slot j uniform over all insertions
        // so far; keep only when it lands inside the buffer.
        let j = rand::Rng::random_range(rng, 0..self.insertions);
        if (j as usize) < self.capacity {
            self.items[j as usize] = (input.to_vec(), label, source_task);
        }
    }

    /// Labels currently stored (test introspection).
    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.1).collect()
    }

    pub fn source_tasks(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.2).collect()
    }

    /// Gather `k` distinct stored examples into a batch tensor.
    pub fn sample(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<(Tensor<F>, Vec<usize>)> {
        if k == 0 || k > self.items.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot sample {k} of {} stored examples",
                self.items.len()
            )));
        }
        let picks = sample_distinct(rng, self.items.len(), k);
        let mut data = Vec::new();
        let mut labels = Vec::with_capacity(k);
        for &i in &picks {
            data.extend_from_slice(&self.items[i].0);
            labels.push(self.items[i].1);
        }
        let mut shape = alloc::vec![k];
        shape.extend_from_slice(&self.item_shape);
        Ok((Tensor::from_vec(&shape, data)?, labels))
    }
}

pub fn train_er<F: Scalar>(
    mut model: Model<F>,
    stream: &TaskStream<F>,
    cfg: &ErConfig,
) -> Result<RunOutcome<F>> {
    cfg.base.validate()?;
    if cfg.capacity == 0 {
        return Err(Error::InvalidConfig("replay capacity must be positive".into()));
    }
    let lr = F::from_f64(cfg.base.learning_rate);
    let (c, h, w) = stream.input_shape();
    let mut buffer = ReplayBuffer::new(cfg.capacity, &[c, h, w]);
    let mut buffer_rng = substream(cfg.base.seed, "buffer", &[]);
    let mut grads = ParamBundle::zeros_like(&model);
    let mut checkpoints = Vec::new();
    let mut per_task = Vec::new();

    for task in &stream.tasks {
        let mut last_loss = None;
        let mut steps = 0usize;
        for epoch in 0..cfg.base.epochs {
            let mut order: Vec<usize> = (0..task.n_train()).collect();
            let mut rng = substream(cfg.base.seed, "batch", &[task.task_id as u64, epoch as u64]);
            shuffle(&mut order, &mut rng);
            for chunk in order.chunks(cfg.base.batch_size) {
                let mut data = Vec::new();
                let mut labels = Vec::new();
                for &i in chunk {
                    data.extend_from_slice(task.train_inputs.item(i));
                    labels.push(task.train_labels[i]);
                }
                // Replay examples join the current batch in one step.
                let replay = buffer.len().min(cfg.base.batch_size);
                if replay > 0 {
                    let (rx, rl) = buffer.sample(replay, &mut buffer_rng)?;
                    data.extend_from_slice(rx.data());
                    labels.extend_from_slice(&rl);
                }
                let inputs = Tensor::from_vec(&[labels.len(), c, h, w], data)?;
                last_loss = Some(ce_step(&mut model, &inputs, &labels, &mut grads, lr, task.task_id, steps)?);
                for &i in chunk {
                    buffer.insert(task.train_inputs.item(i), task.train_labels[i], task.task_id, &mut buffer_rng);
                }
                steps += 1;
            }
        }
        per_task.push(TaskSummary {
            task_id: task.task_id,
            steps,
            train_loss_final: last_loss,
            reg_loss_final: None,
        });
        checkpoints.push(model.clone());
    }
    finish_run(MethodTag::Er, checkpoints, per_task, stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservoir_fills_then_replaces() {
        let mut rng = substream(1, "buffer", &[]);
        let mut buf = ReplayBuffer::<f32>::new(3, &[2]);
        for i in 0..3 {
            buf.insert(&[i as f32, 0.0], i, 1, &mut rng);
        }
        assert_eq!(buf.len(), 3);
        for i in 3..100 {
            buf.insert(&[i as f32, 0.0], i, 2, &mut rng);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.insertions(), 100);
        // Some replacement must have happened by now.
        assert!(buf.labels().iter().any(|&l| l >= 3));
    }

    #[test]
    fn sample_rejects_oversized_requests() {
        let mut rng = substream(1, "buffer", &[]);
        let mut buf = ReplayBuffer::<f32>::new(5, &[1]);
        buf.insert(&[1.0], 0, 1, &mut rng);
        assert!(buf.sample(2, &mut rng).is_err());
        let (x, l) = buf.sample(1, &mut rng).unwrap();
        assert_eq!(x.shape(), &[1, 1]);
        assert_eq!(l, vec![0]);
    }
}
