//! Layer-addressed network: named parameter units on an instruction tape.
//!
//! A unit is the granularity of freezing, swapping, and profiling: a
//! convolution together with its following normalization, or a dense layer.
//! Unit order follows the tape, so "prefix" always means topological prefix.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::arch::Arch;
use crate::error::{Error, Result};
use crate::layers::{
    global_avg_pool_backward_acc, global_avg_pool_forward, maxpool2_backward_acc,
    maxpool2_forward, relu_backward_acc, relu_forward, BatchNorm, Conv2d, Linear, NormAux,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ─── Structure ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum UnitKind<F> {
    ConvBn { conv: Conv2d<F>, norm: BatchNorm<F> },
    Dense(Linear<F>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit<F> {
    pub name: String,
    pub kind: UnitKind<F>,
    pub trainable: bool,
}

impl<F: Scalar> Unit<F> {
    /// Output channels (feature maps for conv, features for dense).
    pub fn out_channels(&self) -> usize {
        match &self.kind {
            UnitKind::ConvBn { conv, .. } => conv.out_ch,
            UnitKind::Dense(lin) => lin.out_features,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    /// Apply parameter unit by index.
    Unit(usize),
    Relu,
    MaxPool2,
    GlobalAvgPool,
    Flatten,
    /// Elementwise add of another slot (residual shortcut).
    Add { skip: usize },
}

/// One tape step: read `input` slot, write `output` slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instr {
    pub op: Op,
    pub input: usize,
    pub output: usize,
}

/// How normalization statistics are sourced during a pass.
#[derive(Debug, Clone, Copy, PartialEq)]
enum NormSource {
    Running,
    Batch,
    BatchUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PassKind {
    Eval,
    Train,
    Capture,
}

/// Which layers a prefix freeze covers and how frozen normalization behaves.
#[derive(Debug, Clone, PartialEq)]
pub struct FreezeConfig {
    /// Freeze every unit up to and including this one; `None` freezes nothing.
    pub fz_layer: Option<String>,
    /// Frozen normalization keeps using stored running statistics during
    /// training passes. Disabling lets frozen statistics drift.
    pub freeze_norm_stats: bool,
}

impl Default for FreezeConfig {
    fn default() -> Self {
        FreezeConfig {
            fz_layer: None,
            freeze_norm_stats: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub arch: Arch,
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    units: Vec<Unit<F>>,
    instrs: Vec<Instr>,
    /// Unit index of the classifier head (always the last dense unit).
    head_unit: usize,
    /// Slot id of each unit's output, indexed by unit.
    unit_out_slot: Vec<usize>,
    slot_count: usize,
    freeze_norm_stats: bool,
}

/// Activations and per-layer caches of one forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct Trace<F> {
    slots: Vec<Tensor<F>>,
    /// Per unit: statistics the normalization used.
    norm_aux: Vec<Option<NormAux<F>>>,
    /// Per unit: convolution output before normalization.
    pre_norm: Vec<Option<Tensor<F>>>,
    /// Per instruction: argmax indices of max-pool steps.
    pool_idx: Vec<Option<Vec<u32>>>,
}

impl<F: Scalar> Trace<F> {
    pub fn logits(&self) -> &Tensor<F> {
        self.slots.last().expect("trace has at least the input slot")
    }

    pub fn slot(&self, s: usize) -> &Tensor<F> {
        &self.slots[s]
    }
}

/// Per-unit gradient (or any parameter-shaped) buffers, in unit order with
/// tensors in the same order as [`Model::unit_param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBundle<F> {
    pub units: Vec<Vec<Vec<F>>>,
}

impl<F: Scalar> ParamBundle<F> {
    pub fn zeros_like(model: &Model<F>) -> Self {
        let units = model
            .units
            .iter()
            .map(|u| match &u.kind {
                UnitKind::ConvBn { conv, norm } => vec![
                    vec![F::zero(); conv.weight.len()],
                    vec![F::zero(); norm.gamma.len()],
                    vec![F::zero(); norm.beta.len()],
                ],
                UnitKind::Dense(lin) => vec![
                    vec![F::zero(); lin.weight.len()],
                    vec![F::zero(); lin.bias.len()],
                ],
            })
            .collect();
        ParamBundle { units }
    }

    pub fn zero(&mut self) {
        for unit in &mut self.units {
            for t in unit {
                for v in t.iter_mut() {
                    *v = F::zero();
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &ParamBundle<F>, scale: F) {
        for (a, b) in self.units.iter_mut().zip(&other.units) {
            for (ta, tb) in a.iter_mut().zip(b) {
                for (va, &vb) in ta.iter_mut().zip(tb) {
                    *va += vb * scale;
                }
            }
        }
    }

    pub fn add_squared(&mut self, other: &ParamBundle<F>) {
        for (a, b) in self.units.iter_mut().zip(&other.units) {
            for (ta, tb) in a.iter_mut().zip(b) {
                for (va, &vb) in ta.iter_mut().zip(tb) {
                    *va += vb * vb;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for unit in &mut self.units {
            for t in unit {
                for v in t.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.units
            .iter()
            .flat_map(|u| u.iter())
            .flat_map(|t| t.iter())
            .all(|v| v.is_finite())
    }
}

// ─── Model API ──────────────────────────────────────────────────────────────

impl<F: Scalar> Model<F> {
    /// Assemble from parts; used by the architecture builders.
    pub(crate) fn from_parts(
        arch: Arch,
        input_shape: (usize, usize, usize),
        num_classes: usize,
        units: Vec<Unit<F>>,
        instrs: Vec<Instr>,
        slot_count: usize,
    ) -> Result<Self> {
        let mut unit_out_slot = vec![usize::MAX; units.len()];
        for instr in &instrs {
            if let Op::Unit(i) = instr.op {
                unit_out_slot[i] = instr.output;
            }
        }
        if unit_out_slot.iter().any(|&s| s == usize::MAX) {
            return Err(Error::InvalidConfig(
                "every unit must appear exactly once on the tape".into(),
            ));
        }
        let head_unit = units.len() - 1;
        if !matches!(units[head_unit].kind, UnitKind::Dense(_)) {
            return Err(Error::InvalidConfig(
                "the last unit must be the dense classifier head".into(),
            ));
        }
        Ok(Model {
            arch,
            input_shape,
            num_classes,
            units,
            instrs,
            head_unit,
            unit_out_slot,
            slot_count,
            freeze_norm_stats: true,
        })
    }

    pub fn units(&self) -> &[Unit<F>] {
        &self.units
    }

    pub fn instrs(&self) -> &[Instr] {
        &self.instrs
    }

    pub fn unit_names(&self) -> impl Iterator<Item = &str> {
        self.units.iter().map(|u| u.name.as_str())
    }

    pub fn unit_index(&self, name: &str) -> Result<usize> {
        self.units
            .iter()
            .position(|u| u.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.into()))
    }

    pub fn head_unit(&self) -> usize {
        self.head_unit
    }

    pub fn unit_output_slot(&self, unit: usize) -> usize {
        self.unit_out_slot[unit]
    }

    /// Slot id of the final logits.
    pub fn logits_slot(&self) -> usize {
        self.slot_count - 1
    }

    pub fn is_trainable(&self, unit: usize) -> bool {
        self.units[unit].trainable
    }

    pub fn trainable_unit_indices(&self) -> Vec<usize> {
        (0..self.units.len()).filter(|&i| self.units[i].trainable).collect()
    }

    pub fn param_count(&self) -> usize {
        self.units
            .iter()
            .map(|u| match &u.kind {
                UnitKind::ConvBn { conv, norm } => conv.weight.len() + norm.gamma.len() + norm.beta.len(),
                UnitKind::Dense(lin) => lin.weight.len() + lin.bias.len(),
            })
            .sum()
    }

    /// Trainable parameter tensors of one unit, gradient-bundle order.
    pub fn unit_param_slices(&self, unit: usize) -> Vec<&[F]> {
        match &self.units[unit].kind {
            UnitKind::ConvBn { conv, norm } => vec![&conv.weight, &norm.gamma, &norm.beta],
            UnitKind::Dense(lin) => vec![&lin.weight, &lin.bias],
        }
    }

    pub fn unit_param_slices_mut(&mut self, unit: usize) -> Vec<&mut [F]> {
        match &mut self.units[unit].kind {
            UnitKind::ConvBn { conv, norm } => {
                vec![&mut conv.weight, &mut norm.gamma, &mut norm.beta]
            }
            UnitKind::Dense(lin) => vec![&mut lin.weight, &mut lin.bias],
        }
    }

    // ── Freezing, swapping, digests ──

    /// Set trainable flags: frozen prefix up to and including `fz_layer`,
    /// trainable suffix after it. `None` leaves everything trainable.
    pub fn freeze_prefix(&mut self, cfg: &FreezeConfig) -> Result<()> {
        self.freeze_norm_stats = cfg.freeze_norm_stats;
        let boundary = match &cfg.fz_layer {
            None => {
                for u in &mut self.units {
                    u.trainable = true;
                }
                return Ok(());
            }
            Some(name) => self.unit_index(name)?,
        };
        // Freezing through the head is legal: training degenerates to a
        // parameter no-op while evaluation still works.
        for (i, u) in self.units.iter_mut().enumerate() {
            u.trainable = i > boundary;
        }
        Ok(())
    }

    /// New model equal to `self` except unit `layer` (weights and
    /// normalization statistics) copied from `donor`.
    pub fn swap_layer(&self, donor: &Model<F>, layer: &str) -> Result<Model<F>> {
        self.check_same_arch(donor)?;
        let i = self.unit_index(layer)?;
        let mut out = self.clone();
        out.units[i].kind = donor.units[i].kind.clone();
        Ok(out)
    }

    pub fn check_same_arch(&self, other: &Model<F>) -> Result<()> {
        if self.arch != other.arch
            || self.input_shape != other.input_shape
            || self.num_classes != other.num_classes
            || self.units.len() != other.units.len()
        {
            return Err(Error::ArchMismatch(format!(
                "{:?}/{:?} input {:?}/{:?} classes {}/{}",
                self.arch,
                other.arch,
                self.input_shape,
                other.input_shape,
                self.num_classes,
                other.num_classes
            )));
        }
        for (a, b) in self.units.iter().zip(&other.units) {
            if a.name != b.name {
                return Err(Error::ArchMismatch(format!(
                    "unit name {} vs {}",
                    a.name, b.name
                )));
            }
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of one unit's parameters and statistics.
    pub fn unit_digest(&self, unit: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |xs: &[F]| {
            for &x in xs {
                let mut b = x.bits();
                for _ in 0..8 {
                    h ^= b & 0xff;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                    b >>= 8;
                }
            }
        };
        match &self.units[unit].kind {
            UnitKind::ConvBn { conv, norm } => {
                eat(&conv.weight);
                eat(&norm.gamma);
                eat(&norm.beta);
                eat(&norm.running_mean);
                eat(&norm.running_var);
            }
            UnitKind::Dense(lin) => {
                eat(&lin.weight);
                eat(&lin.bias);
            }
        }
        h
    }

    /// Combined digest of all frozen units; bit-identical parameters and
    /// statistics give equal digests.
    pub fn frozen_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for i in 0..self.units.len() {
            if !self.units[i].trainable {
                h ^= self.unit_digest(i);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    // ── Forward ──

    pub fn forward_eval(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (mut trace, _) = self.run_pass(x, PassKind::Eval)?;
        Ok(trace.slots.pop().expect("non-empty tape"))
    }

    /// Training pass: trainable normalization uses batch statistics and folds
    /// them into the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<F>) -> Result<Trace<F>> {
        let (trace, updates) = self.run_pass(x, PassKind::Train)?;
        for (unit, mean, var) in updates {
            if let UnitKind::ConvBn { norm, .. } = &mut self.units[unit].kind {
                norm.fold_running(&mean, &var);
            }
        }
        Ok(trace)
    }

    /// Feature-capture pass: batch statistics on trainable normalization, but
    /// nothing is mutated. Captured values match what training would see.
    pub fn forward_capture(&self, x: &Tensor<F>) -> Result<Trace<F>> {
        let (trace, updates) = self.run_pass(x, PassKind::Capture)?;
        debug_assert!(updates.is_empty());
        Ok(trace)
    }

    /// Evaluation pass that keeps the trace (running statistics everywhere);
    /// used for per-sample gradients at the deployed operating point.
    pub fn forward_eval_trace(&self, x: &Tensor<F>) -> Result<Trace<F>> {
        let (trace, updates) = self.run_pass(x, PassKind::Eval)?;
        debug_assert!(updates.is_empty());
        Ok(trace)
    }

    #[allow(clippy::type_complexity)]
    fn run_pass(
        &self,
        x: &Tensor<F>,
        kind: PassKind,
    ) -> Result<(Trace<F>, Vec<(usize, Vec<F>, Vec<F>)>)> {
        let (n, c, h, w) = x.dims4()?;
        let (ec, eh, ew) = self.input_shape;
        if (c, h, w) != (ec, eh, ew) {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{}x{} inputs, got {c}x{h}x{w}",
                ec, eh, ew
            )));
        }
        if n == 0 {
            return Err(Error::EmptyInput("forward pass on an empty batch".into()));
        }
        let mut slots: Vec<Tensor<F>> = Vec::with_capacity(self.slot_count);
        slots.push(x.clone());
        let mut norm_aux: Vec<Option<NormAux<F>>> = vec![None; self.units.len()];
        let mut pre_norm: Vec<Option<Tensor<F>>> = vec![None; self.units.len()];
        let mut pool_idx: Vec<Option<Vec<u32>>> = vec![None; self.instrs.len()];
        let mut updates = Vec::new();

        for (pc, instr) in self.instrs.iter().enumerate() {
            debug_assert_eq!(instr.output, slots.len());
            let out = match instr.op {
                Op::Unit(i) => {
                    let unit = &self.units[i];
                    match &unit.kind {
                        UnitKind::ConvBn { conv, norm } => {
                            let pre = conv.forward(&slots[instr.input])?;
                            let source = match (kind, unit.trainable) {
                                (PassKind::Eval, _) => NormSource::Running,
                                (PassKind::Train, true) => NormSource::BatchUpdate,
                                (PassKind::Train, false) => {
                                    if self.freeze_norm_stats {
                                        NormSource::Running
                                    } else {
                                        NormSource::BatchUpdate
                                    }
                                }
                                (PassKind::Capture, true) => NormSource::Batch,
                                (PassKind::Capture, false) => NormSource::Running,
                            };
                            let (y, aux) = match source {
                                NormSource::Running => norm.forward_running(&pre)?,
                                NormSource::Batch => {
                                    let (y, aux, _) = norm.forward_batch(&pre)?;
                                    (y, aux)
                                }
                                NormSource::BatchUpdate => {
                                    let (y, aux, var) = norm.forward_batch(&pre)?;
                                    updates.push((i, aux.mean.clone(), var));
                                    (y, aux)
                                }
                            };
                            norm_aux[i] = Some(aux);
                            pre_norm[i] = Some(pre);
                            y
                        }
                        UnitKind::Dense(lin) => lin.forward(&slots[instr.input])?,
                    }
                }
                Op::Relu => relu_forward(&slots[instr.input]),
                Op::MaxPool2 => {
                    let (y, idx) = maxpool2_forward(&slots[instr.input])?;
                    pool_idx[pc] = Some(idx);
                    y
                }
                Op::GlobalAvgPool => global_avg_pool_forward(&slots[instr.input])?,
                Op::Flatten => {
                    let src = &slots[instr.input];
                    let flat = src.item_len();
                    src.clone().reshape(&[n, flat])?
                }
                Op::Add { skip } => {
                    let a = &slots[instr.input];
                    let b = &slots[skip];
                    if a.shape() != b.shape() {
                        return Err(Error::ShapeMismatch(format!(
                            "residual add of {:?} and {:?}",
                            a.shape(),
                            b.shape()
                        )));
                    }
                    let mut y = a.clone();
                    for (v, &s) in y.data_mut().iter_mut().zip(b.iter()) {
                        *v += s;
                    }
                    y
                }
            };
            slots.push(out);
        }
        Ok((
            Trace {
                slots,
                norm_aux,
                pre_norm,
                pool_idx,
            },
            updates,
        ))
    }

    // ── Backward ──

    /// Slot of the lowest trainable unit's input; backward never descends
    /// past it (the frozen prefix needs no gradients).
    pub fn backward_stop_slot(&self) -> Option<usize> {
        self.instrs
            .iter()
            .filter_map(|instr| match instr.op {
                Op::Unit(i) if self.units[i].trainable => Some(instr.input),
                _ => None,
            })
            .min()
    }

    /// Backpropagate from `seeds` (slot id, gradient at that slot) and
    /// accumulate parameter gradients of trainable units into `grads`.
    /// Multiple seeds sum, so a loss on the logits and an auxiliary penalty
    /// on intermediate activations can share one pass.
    pub fn backward(
        &self,
        trace: &Trace<F>,
        seeds: Vec<(usize, Tensor<F>)>,
        grads: &mut ParamBundle<F>,
    ) -> Result<()> {
        let Some(stop_slot) = self.backward_stop_slot() else {
            return Ok(());
        };
        let mut slot_grads: Vec<Option<Tensor<F>>> = vec![None; trace.slots.len()];
        for (slot, g) in seeds {
            if g.shape() != trace.slots[slot].shape() {
                return Err(Error::ShapeMismatch(format!(
                    "seed gradient shape {:?} at slot {slot} with activation {:?}",
                    g.shape(),
                    trace.slots[slot].shape()
                )));
            }
            accumulate_slot(&mut slot_grads, slot, &g);
        }

        for (pc, instr) in self.instrs.iter().enumerate().rev() {
            let Some(dy) = slot_grads[instr.output].take() else {
                continue;
            };
            let need_dx = instr.input >= stop_slot;
            match instr.op {
                Op::Unit(i) => {
                    let unit = &self.units[i];
                    match &unit.kind {
                        UnitKind::ConvBn { conv, norm } => {
                            let pre = trace.pre_norm[i]
                                .as_ref()
                                .expect("trace carries conv output for every conv unit");
                            let aux = trace.norm_aux[i]
                                .as_ref()
                                .expect("trace carries norm statistics for every conv unit");
                            let mut d_pre = Tensor::zeros(pre.shape());
                            if unit.trainable {
                                let [dw, dg, db] = match &mut grads.units[i][..] {
                                    [a, b, c] => [a, b, c],
                                    _ => unreachable!("conv grad bundle has three tensors"),
                                };
                                norm.backward(pre, &dy, aux, dg, db, Some(&mut d_pre))?;
                                if need_dx {
                                    let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                                    conv.backward(&trace.slots[instr.input], &d_pre, dw, Some(&mut dx))?;
                                    accumulate_slot(&mut slot_grads, instr.input, &dx);
                                } else {
                                    conv.backward(&trace.slots[instr.input], &d_pre, dw, None)?;
                                }
                            } else if need_dx {
                                // Frozen unit on the gradient path: pass through
                                // without touching parameter gradients.
                                let mut dg = vec![F::zero(); norm.gamma.len()];
                                let mut dbv = vec![F::zero(); norm.beta.len()];
                                norm.backward(pre, &dy, aux, &mut dg, &mut dbv, Some(&mut d_pre))?;
                                let mut dw = vec![F::zero(); conv.weight.len()];
                                let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                                conv.backward(&trace.slots[instr.input], &d_pre, &mut dw, Some(&mut dx))?;
                                accumulate_slot(&mut slot_grads, instr.input, &dx);
                            }
                        }
                        UnitKind::Dense(lin) => {
                            if unit.trainable {
                                let [dw, db] = match &mut grads.units[i][..] {
                                    [a, b] => [a, b],
                                    _ => unreachable!("dense grad bundle has two tensors"),
                                };
                                if need_dx {
                                    let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                                    lin.backward(&trace.slots[instr.input], &dy, dw, db, Some(&mut dx))?;
                                    accumulate_slot(&mut slot_grads, instr.input, &dx);
                                } else {
                                    lin.backward(&trace.slots[instr.input], &dy, dw, db, None)?;
                                }
                            } else if need_dx {
                                let mut dw = vec![F::zero(); lin.weight.len()];
                                let mut db = vec![F::zero(); lin.bias.len()];
                                let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                                lin.backward(&trace.slots[instr.input], &dy, &mut dw, &mut db, Some(&mut dx))?;
                                accumulate_slot(&mut slot_grads, instr.input, &dx);
                            }
                        }
                    }
                }
                Op::Relu => {
                    if need_dx {
                        let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                        relu_backward_acc(&trace.slots[instr.output], &dy, &mut dx);
                        accumulate_slot(&mut slot_grads, instr.input, &dx);
                    }
                }
                Op::MaxPool2 => {
                    if need_dx {
                        let idx = trace.pool_idx[pc]
                            .as_ref()
                            .expect("trace carries indices for every pool step");
                        let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                        maxpool2_backward_acc(&dy, idx, &mut dx);
                        accumulate_slot(&mut slot_grads, instr.input, &dx);
                    }
                }
                Op::GlobalAvgPool => {
                    if need_dx {
                        let mut dx = Tensor::zeros(trace.slots[instr.input].shape());
                        global_avg_pool_backward_acc(&dy, &mut dx)?;
                        accumulate_slot(&mut slot_grads, instr.input, &dx);
                    }
                }
                Op::Flatten => {
                    if need_dx {
                        let dx = dy.reshape(trace.slots[instr.input].shape())?;
                        accumulate_slot(&mut slot_grads, instr.input, &dx);
                    }
                }
                Op::Add { skip } => {
                    if need_dx {
                        accumulate_slot(&mut slot_grads, instr.input, &dy);
                    }
                    if skip >= stop_slot {
                        accumulate_slot(&mut slot_grads, skip, &dy);
                    }
                }
            }
        }
        Ok(())
    }

    /// One vanilla SGD step on trainable units only.
    pub fn sgd_step(&mut self, grads: &ParamBundle<F>, lr: F) {
        for i in 0..self.units.len() {
            if !self.units[i].trainable {
                continue;
            }
            let g = &grads.units[i];
            for (param, gt) in self.unit_param_slices_mut(i).into_iter().zip(g) {
                for (p, &gv) in param.iter_mut().zip(gt) {
                    *p = *p - lr * gv;
                }
            }
        }
    }

    // ── Tensor IO (checkpointing) ──

    /// All weight and statistic tensors as (unit name, role, shape, data).
    pub fn tensor_entries(&self) -> Vec<(String, &'static str, Vec<usize>, &[F])> {
        let mut out = Vec::new();
        for u in &self.units {
            match &u.kind {
                UnitKind::ConvBn { conv, norm } => {
                    out.push((
                        u.name.clone(),
                        "weight",
                        vec![conv.out_ch, conv.in_ch, conv.kernel, conv.kernel],
                        conv.weight.as_slice(),
                    ));
                    out.push((u.name.clone(), "gamma", vec![norm.channels], norm.gamma.as_slice()));
                    out.push((u.name.clone(), "beta", vec![norm.channels], norm.beta.as_slice()));
                    out.push((
                        u.name.clone(),
                        "running_mean",
                        vec![norm.channels],
                        norm.running_mean.as_slice(),
                    ));
                    out.push((
                        u.name.clone(),
                        "running_var",
                        vec![norm.channels],
                        norm.running_var.as_slice(),
                    ));
                }
                UnitKind::Dense(lin) => {
                    out.push((
                        u.name.clone(),
                        "weight",
                        vec![lin.out_features, lin.in_features],
                        lin.weight.as_slice(),
                    ));
                    out.push((u.name.clone(), "bias", vec![lin.out_features], lin.bias.as_slice()));
                }
            }
        }
        out
    }

    /// Overwrite one tensor by unit name and role; lengths must match.
    pub fn load_tensor(&mut self, unit_name: &str, role: &str, data: &[F]) -> Result<()> {
        let i = self.unit_index(unit_name)?;
        let dst: &mut Vec<F> = match (&mut self.units[i].kind, role) {
            (UnitKind::ConvBn { conv, .. }, "weight") => &mut conv.weight,
            (UnitKind::ConvBn { norm, .. }, "gamma") => &mut norm.gamma,
            (UnitKind::ConvBn { norm, .. }, "beta") => &mut norm.beta,
            (UnitKind::ConvBn { norm, .. }, "running_mean") => &mut norm.running_mean,
            (UnitKind::ConvBn { norm, .. }, "running_var") => &mut norm.running_var,
            (UnitKind::Dense(lin), "weight") => &mut lin.weight,
            (UnitKind::Dense(lin), "bias") => &mut lin.bias,
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unit {unit_name} has no tensor with role {role}"
                )))
            }
        };
        if dst.len() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {unit_name}/{role} has {} elements, got {}",
                dst.len(),
                data.len()
            )));
        }
        dst.copy_from_slice(data);
        Ok(())
    }
}

fn accumulate_slot<F: Scalar>(slot_grads: &mut [Option<Tensor<F>>], slot: usize, g: &Tensor<F>) {
    match &mut slot_grads[slot] {
        Some(existing) => {
            for (v, &a) in existing.data_mut().iter_mut().zip(g.iter()) {
                *v += a;
            }
        }
        None => slot_grads[slot] = Some(g.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_model, Arch};

    fn cnn() -> Model<f32> {
        build_model(Arch::SmallCnn, (1, 8, 8), 4, 11).unwrap()
    }

    fn ramp_input(n: usize, c: usize, h: usize, w: usize) -> Tensor<f32> {
        let len = n * c * h * w;
        let data = (0..len).map(|i| (i as f32) / (len as f32) - 0.4).collect();
        Tensor::from_vec(&[n, c, h, w], data).unwrap()
    }

    fn all_digests(m: &Model<f32>) -> Vec<u64> {
        (0..m.units().len()).map(|u| m.unit_digest(u)).collect()
    }

    #[test]
    fn freeze_prefix_covers_named_unit_and_before() {
        let mut m = cnn();
        m.freeze_prefix(&FreezeConfig {
            fz_layer: Some("conv2".into()),
            freeze_norm_stats: true,
        })
        .unwrap();
        let flags: Vec<bool> = (0..m.units().len()).map(|u| m.is_trainable(u)).collect();
        assert_eq!(flags, [false, false, true, true]);
        // Freezing through the head is the degenerate no-op-training case.
        let mut m2 = cnn();
        m2.freeze_prefix(&FreezeConfig {
            fz_layer: Some("head".into()),
            freeze_norm_stats: true,
        })
        .unwrap();
        assert!((0..m2.units().len()).all(|u| !m2.is_trainable(u)));
        assert_eq!(m2.backward_stop_slot(), None);
        assert!(m2.freeze_prefix(&FreezeConfig {
            fz_layer: Some("nope".into()),
            freeze_norm_stats: true,
        })
        .is_err());
    }

    #[test]
    fn swap_layer_replaces_exactly_one_unit() {
        let a = cnn();
        let b = build_model::<f32>(Arch::SmallCnn, (1, 8, 8), 4, 12).unwrap();
        let swapped = a.swap_layer(&b, "conv2").unwrap();
        let (da, db, ds) = (all_digests(&a), all_digests(&b), all_digests(&swapped));
        let i = a.unit_index("conv2").unwrap();
        for u in 0..da.len() {
            if u == i {
                assert_eq!(ds[u], db[u]);
                assert_ne!(ds[u], da[u]);
            } else {
                assert_eq!(ds[u], da[u]);
            }
        }
        assert!(a.swap_layer(&b, "nope").is_err());
    }

    #[test]
    fn eval_and_capture_leave_the_model_unchanged() {
        let m = cnn();
        let x = ramp_input(3, 1, 8, 8);
        let before = all_digests(&m);
        m.forward_eval(&x).unwrap();
        m.forward_capture(&x).unwrap();
        assert_eq!(all_digests(&m), before);
    }

    #[test]
    fn train_pass_folds_running_stats_for_trainable_norms_only() {
        let mut m = cnn();
        m.freeze_prefix(&FreezeConfig {
            fz_layer: Some("conv1".into()),
            freeze_norm_stats: true,
        })
        .unwrap();
        let x = ramp_input(3, 1, 8, 8);
        let before = all_digests(&m);
        m.forward_train(&x).unwrap();
        let after = all_digests(&m);
        let conv1 = m.unit_index("conv1").unwrap();
        let conv2 = m.unit_index("conv2").unwrap();
        assert_eq!(after[conv1], before[conv1], "frozen stats must not drift");
        assert_ne!(after[conv2], before[conv2], "trainable stats must update");
    }

    #[test]
    fn sgd_step_skips_frozen_units() {
        let mut m = cnn();
        m.freeze_prefix(&FreezeConfig {
            fz_layer: Some("conv2".into()),
            freeze_norm_stats: true,
        })
        .unwrap();
        let mut grads = ParamBundle::zeros_like(&m);
        for unit in &mut grads.units {
            for tensor in unit {
                for g in tensor.iter_mut() {
                    *g = 1.0;
                }
            }
        }
        let before = all_digests(&m);
        m.sgd_step(&grads, 0.1);
        let after = all_digests(&m);
        for u in 0..m.units().len() {
            if m.is_trainable(u) {
                assert_ne!(after[u], before[u]);
            } else {
                assert_eq!(after[u], before[u]);
            }
        }
    }

    #[test]
    fn tensor_entries_roundtrip_through_load() {
        let src = cnn();
        let mut dst = build_model::<f32>(Arch::SmallCnn, (1, 8, 8), 4, 99).unwrap();
        assert_ne!(all_digests(&src), all_digests(&dst));
        let entries: Vec<(String, String, Vec<f32>)> = src
            .tensor_entries()
            .into_iter()
            .map(|(unit, role, _, data)| (unit, role.to_string(), data.to_vec()))
            .collect();
        for (unit, role, data) in &entries {
            dst.load_tensor(unit, role, data).unwrap();
        }
        assert_eq!(all_digests(&src), all_digests(&dst));
        assert!(dst.load_tensor("conv1", "nope", &[]).is_err());
    }

    #[test]
    fn backward_stop_slot_tracks_first_trainable_unit() {
        let mut m = cnn();
        assert_eq!(m.backward_stop_slot(), Some(0));
        m.freeze_prefix(&FreezeConfig {
            fz_layer: Some("conv1".into()),
            freeze_norm_stats: true,
        })
        .unwrap();
        let conv2 = m.unit_index("conv2").unwrap();
        let input_slot = m.instrs()[m
            .instrs()
            .iter()
            .position(|i| matches!(i.op, Op::Unit(u) if u == conv2))
            .unwrap()]
        .input;
        assert_eq!(m.backward_stop_slot(), Some(input_slot));
    }
}
