//! Theoretical training-cost model: FLOPs and peak memory for an
//! architecture / freeze / schedule combination, without instantiating
//! weights.
//!
//! Conventions (32-bit elements throughout, no optimizer state):
//! - forward conv FLOPs = 2 * K^2 * Cin * Cout * Hout * Wout per sample,
//!   dense = 2 * in * out, normalization/activation/pool = output elements;
//! - backward = 2x forward for rows above the freeze boundary, zero below;
//! - peak memory = parameters (all rows) + gradients (trainable rows)
//!   + batch x activations stored for backward + feature-standard bytes.
//!   Stored for backward are the outputs of weight rows above the boundary
//!   plus the one activation entering the first trainable row; intermediate
//!   normalization/activation outputs are treated as recomputable and only
//!   appear as per-row activation sizes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightcl::PositionSet;
use crate::model::{Model, Op, UnitKind};
use crate::scalar::Scalar;

pub const BYTES_PER_ELEMENT: u64 = 4;

// ─── Declarative architecture description ───────────────────────────────────

/// Layer list with shapes; enough to cost a network without weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub name: String,
    /// Channels, height, width.
    pub input: [usize; 3],
    pub layers: Vec<SpecLayer>,
}

/// Unknown keys pass silently here: `deny_unknown_fields` cannot be
/// combined with the flattened kind tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecLayer {
    pub name: String,
    /// Input comes from this layer's output instead of the previous row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(flatten)]
    pub kind: SpecLayerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpecLayerKind {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        out_features: usize,
    },
    Norm,
    Act,
    MaxPool {
        kernel: usize,
    },
    GlobalAvgPool,
    Flatten,
    Add {
        with: String,
    },
}

impl SpecLayerKind {
    pub fn is_weight(&self) -> bool {
        matches!(self, SpecLayerKind::Conv { .. } | SpecLayerKind::Linear { .. })
    }

    fn kind_name(&self) -> &'static str {
        match self {
            SpecLayerKind::Conv { .. } => "conv",
            SpecLayerKind::Linear { .. } => "linear",
            SpecLayerKind::Norm => "norm",
            SpecLayerKind::Act => "act",
            SpecLayerKind::MaxPool { .. } => "max_pool",
            SpecLayerKind::GlobalAvgPool => "global_avg_pool",
            SpecLayerKind::Flatten => "flatten",
            SpecLayerKind::Add { .. } => "add",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    pub fn elements(&self) -> u64 {
        match *self {
            Shape::Chw(c, h, w) => (c * h * w) as u64,
            Shape::Flat(d) => d as u64,
        }
    }
}

/// One spec row with shapes, parameter count, and forward FLOPs resolved.
#[derive(Debug, Clone)]
pub struct ResolvedLayer {
    pub name: String,
    pub kind: SpecLayerKind,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub params: u64,
    pub fwd_flops_per_sample: u64,
}

/// Resolve shapes row by row. Errors name the offending layer.
pub fn resolve_spec(spec: &ArchSpec) -> Result<Vec<ResolvedLayer>> {
    let mut out: Vec<ResolvedLayer> = Vec::with_capacity(spec.layers.len());
    let mut by_name: BTreeMap<String, Shape> = BTreeMap::new();
    let [c, h, w] = spec.input;
    by_name.insert("input".to_string(), Shape::Chw(c, h, w));
    let mut prev = Shape::Chw(c, h, w);

    let lookup = |by_name: &BTreeMap<String, Shape>, name: &str, ctx: &str| -> Result<Shape> {
        by_name.get(name).copied().ok_or_else(|| {
            Error::InvalidConfig(format!("{ctx} references unknown layer '{name}'"))
        })
    };

    for layer in &spec.layers {
        if by_name.contains_key(&layer.name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate layer name '{}'",
                layer.name
            )));
        }
        let in_shape = match &layer.from {
            Some(src) => lookup(&by_name, src, &layer.name)?,
            None => prev,
        };
        let (out_shape, params, flops) = match &layer.kind {
            SpecLayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let Shape::Chw(ci, hi, wi) = in_shape else {
                    return Err(Error::ShapeMismatch(format!(
                        "conv '{}' needs a spatial input",
                        layer.name
                    )));
                };
                let ho = crate::linalg::conv_out(hi, *kernel, *stride, *padding);
                let wo = crate::linalg::conv_out(wi, *kernel, *stride, *padding);
                if ho == 0 || wo == 0 {
                    return Err(Error::ShapeMismatch(format!(
                        "conv '{}' collapses {hi}x{wi} to zero",
                        layer.name
                    )));
                }
                let params = (out_channels * ci * kernel * kernel) as u64;
                let flops = 2 * params * (ho * wo) as u64;
                (Shape::Chw(*out_channels, ho, wo), params, flops)
            }
            SpecLayerKind::Linear { out_features } => {
                let d = match in_shape {
                    Shape::Flat(d) => d,
                    Shape::Chw(..) => {
                        return Err(Error::ShapeMismatch(format!(
                            "linear '{}' needs a flat input (add a flatten or pooling row)",
                            layer.name
                        )))
                    }
                };
                let params = (d * out_features + out_features) as u64;
                let flops = 2 * (d * out_features) as u64;
                (Shape::Flat(*out_features), params, flops)
            }
            SpecLayerKind::Norm => {
                let Shape::Chw(ci, ..) = in_shape else {
                    return Err(Error::ShapeMismatch(format!(
                        "norm '{}' needs a spatial input",
                        layer.name
                    )));
                };
                (in_shape, 2 * ci as u64, in_shape.elements())
            }
            SpecLayerKind::Act => (in_shape, 0, in_shape.elements()),
            SpecLayerKind::MaxPool { kernel } => {
                let Shape::Chw(ci, hi, wi) = in_shape else {
                    return Err(Error::ShapeMismatch(format!(
                        "max_pool '{}' needs a spatial input",
                        layer.name
                    )));
                };
                let shape = Shape::Chw(ci, hi / kernel, wi / kernel);
                (shape, 0, shape.elements())
            }
            SpecLayerKind::GlobalAvgPool => {
                let Shape::Chw(ci, ..) = in_shape else {
                    return Err(Error::ShapeMismatch(format!(
                        "global_avg_pool '{}' needs a spatial input",
                        layer.name
                    )));
                };
                (Shape::Flat(ci), 0, in_shape.elements())
            }
            SpecLayerKind::Flatten => (Shape::Flat(in_shape.elements() as usize), 0, 0),
            SpecLayerKind::Add { with } => {
                let other = lookup(&by_name, with, &layer.name)?;
                if other != in_shape {
                    return Err(Error::ShapeMismatch(format!(
                        "add '{}' mixes {in_shape:?} and {other:?}",
                        layer.name
                    )));
                }
                (in_shape, 0, in_shape.elements())
            }
        };
        by_name.insert(layer.name.clone(), out_shape);
        prev = out_shape;
        out.push(ResolvedLayer {
            name: layer.name.clone(),
            kind: layer.kind.clone(),
            in_shape,
            out_shape,
            params,
            fwd_flops_per_sample: flops,
        });
    }
    Ok(out)
}

/// Spatial map shape per weight row, for feature-standard sizing.
pub fn feature_map_shapes(resolved: &[ResolvedLayer]) -> BTreeMap<String, (usize, usize, usize)> {
    let mut out = BTreeMap::new();
    for r in resolved {
        if r.kind.is_weight() {
            let (c, h, w) = match r.out_shape {
                Shape::Chw(c, h, w) => (c, h, w),
                Shape::Flat(d) => (d, 1, 1),
            };
            out.insert(r.name.clone(), (c, h, w));
        }
    }
    out
}

// ─── Freeze resolution ──────────────────────────────────────────────────────

/// Freeze description at the spec level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostFreeze {
    /// Weight row at the freeze boundary; the frozen prefix runs through it
    /// and its trailing non-weight rows (its normalization and activation).
    pub fz_layer: Option<String>,
}

/// Per-row trainable flags under `freeze`. The boundary extends past the
/// named row to just before the next weight row, mirroring unit granularity.
pub fn trainable_flags(resolved: &[ResolvedLayer], freeze: &CostFreeze) -> Result<Vec<bool>> {
    let Some(fz) = &freeze.fz_layer else {
        return Ok(alloc::vec![true; resolved.len()]);
    };
    let mut boundary = resolved
        .iter()
        .position(|r| &r.name == fz)
        .ok_or_else(|| Error::UnknownLayer(fz.clone()))?;
    while boundary + 1 < resolved.len() && !resolved[boundary + 1].kind.is_weight() {
        boundary += 1;
    }
    Ok((0..resolved.len()).map(|i| i > boundary).collect())
}

// ─── Reports ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer_name: String,
    pub kind: String,
    pub trainable: bool,
    /// Whether this row's output activation is held for the backward pass.
    pub stored_for_backward: bool,
    pub param_bytes: u64,
    pub grad_bytes: u64,
    /// Output activation bytes per sample.
    pub activation_bytes: u64,
    pub fwd_flops_per_sample: u64,
    pub bwd_flops_per_sample: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub peak_memory_bytes: u64,
    pub training_flops: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAssumptions {
    pub bytes_per_element: u64,
    pub batch_size: u64,
    /// Total optimization steps across all tasks and epochs.
    pub steps: u64,
    /// Feature-standard bytes included in the peak (0 without regulation).
    pub fs_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub per_layer: Vec<LayerCost>,
    pub totals: ReportTotals,
    pub assumptions: ReportAssumptions,
}

/// Optimization schedule the FLOPs total scales by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub batch_size: u64,
    /// Gradient-step batches per epoch, per task.
    pub batches: u64,
    pub epochs: u64,
    pub tasks: u64,
    /// Forward-only batches added on top of training (evaluation sweeps);
    /// counted at `batch_size` over the full network.
    pub extra_forward_batches: u64,
}

impl TrainingPlan {
    pub fn steps(&self) -> u64 {
        self.batches * self.epochs * self.tasks
    }
}

/// Extra per-step work of the memory-regulated method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulationCost {
    /// Memory samples forwarded (and backpropagated through the trainable
    /// suffix) at every step, and forwarded once per task for standards.
    pub mem_size: u64,
}

fn row_report(
    resolved: &[ResolvedLayer],
    flags: &[bool],
) -> (Vec<LayerCost>, u64, u64, u64, u64) {
    // Synthetic leading row for the network input keeps totals recomputable
    // from rows alone.
    let mut rows = Vec::with_capacity(resolved.len() + 1);
    let input_elems = match resolved.first() {
        Some(r) => r.in_shape.elements(),
        None => 0,
    };
    rows.push(LayerCost {
        layer_name: "input".to_string(),
        kind: "input".to_string(),
        trainable: false,
        stored_for_backward: false,
        param_bytes: 0,
        grad_bytes: 0,
        activation_bytes: input_elems * BYTES_PER_ELEMENT,
        fwd_flops_per_sample: 0,
        bwd_flops_per_sample: 0,
    });
    // The activation entering the first trainable row must stay resident.
    // That is the output of the last frozen row, or the network input when
    // nothing is frozen.
    let first_trainable = flags.iter().position(|&t| t);
    let stored_input_row: Option<usize> = match first_trainable {
        Some(0) => None, // network input: the synthetic row above
        Some(i) => Some(i - 1),
        None => None,
    };
    if matches!(first_trainable, Some(0)) {
        rows[0].stored_for_backward = true;
    }

    let (mut fwd_all, mut bwd_train, mut fwd_frozen) = (0u64, 0u64, 0u64);
    let mut stored_bytes = 0u64;
    for (i, r) in resolved.iter().enumerate() {
        let trainable = flags[i];
        let act_bytes = r.out_shape.elements() * BYTES_PER_ELEMENT;
        let stored = (trainable && r.kind.is_weight()) || stored_input_row == Some(i);
        let bwd = if trainable { 2 * r.fwd_flops_per_sample } else { 0 };
        fwd_all += r.fwd_flops_per_sample;
        bwd_train += bwd;
        if !trainable {
            fwd_frozen += r.fwd_flops_per_sample;
        }
        if stored {
            stored_bytes += act_bytes;
        }
        rows.push(LayerCost {
            layer_name: r.name.clone(),
            kind: r.kind.kind_name().to_string(),
            trainable,
            stored_for_backward: stored,
            param_bytes: r.params * BYTES_PER_ELEMENT,
            grad_bytes: if trainable { r.params * BYTES_PER_ELEMENT } else { 0 },
            activation_bytes: act_bytes,
            fwd_flops_per_sample: r.fwd_flops_per_sample,
            bwd_flops_per_sample: bwd,
        });
    }
    if rows[0].stored_for_backward {
        stored_bytes += rows[0].activation_bytes;
    }
    let _ = fwd_frozen;
    (rows, fwd_all, bwd_train, stored_bytes, input_elems)
}

/// Total training FLOPs of the schedule. With `regulation`, every step adds
/// a forward pass over the memory samples plus their backward through the
/// trainable suffix, and each task adds one capture pass for the standards.
pub fn estimate_flops(
    spec: &ArchSpec,
    freeze: &CostFreeze,
    plan: &TrainingPlan,
    regulation: Option<RegulationCost>,
) -> Result<u128> {
    let resolved = resolve_spec(spec)?;
    let flags = trainable_flags(&resolved, freeze)?;
    let (_, fwd_all, bwd_train, _, _) = row_report(&resolved, &flags);
    let per_train_sample = (fwd_all + bwd_train) as u128;
    let steps = plan.steps() as u128;
    let mut total = per_train_sample * plan.batch_size as u128 * steps;
    total += (plan.extra_forward_batches as u128) * (plan.batch_size as u128) * fwd_all as u128;
    if let Some(reg) = regulation {
        let m = reg.mem_size as u128;
        // Per-step regulation pass over M.
        total += steps * m * per_train_sample;
        // Per-task standard capture (forward only).
        total += (plan.tasks as u128) * m * fwd_all as u128;
    }
    Ok(total)
}

/// Peak-memory report. `fs_bytes` carries the feature-standard footprint for
/// regulated configurations (0 otherwise).
pub fn estimate_peak_memory(
    spec: &ArchSpec,
    freeze: &CostFreeze,
    batch_size: u64,
    fs_bytes: u64,
) -> Result<ResourceReport> {
    let resolved = resolve_spec(spec)?;
    let flags = trainable_flags(&resolved, freeze)?;
    let (rows, _, _, stored_bytes, _) = row_report(&resolved, &flags);
    let param_bytes: u64 = rows.iter().map(|r| r.param_bytes).sum();
    let grad_bytes: u64 = rows.iter().map(|r| r.grad_bytes).sum();
    let activation_total = if batch_size == 0 { 0 } else { stored_bytes * batch_size };
    let grad_total = if batch_size == 0 { 0 } else { grad_bytes };
    let peak = param_bytes + grad_total + activation_total + fs_bytes;
    Ok(ResourceReport {
        per_layer: rows,
        totals: ReportTotals {
            peak_memory_bytes: peak,
            training_flops: 0,
        },
        assumptions: ReportAssumptions {
            bytes_per_element: BYTES_PER_ELEMENT,
            batch_size,
            steps: 0,
            fs_bytes,
        },
    })
}

/// Combined report: peak memory plus scheduled FLOPs.
pub fn resource_report(
    spec: &ArchSpec,
    freeze: &CostFreeze,
    plan: &TrainingPlan,
    regulation: Option<RegulationCost>,
    fs_bytes: u64,
) -> Result<ResourceReport> {
    let mut report = estimate_peak_memory(spec, freeze, plan.batch_size, fs_bytes)?;
    report.totals.training_flops = estimate_flops(spec, freeze, plan, regulation)?;
    report.assumptions.steps = plan.steps();
    Ok(report)
}

/// Feature-standard footprint: `m` spatial maps per position.
pub fn fs_memory_estimate(
    positions: &PositionSet,
    mem_size: u64,
    layer_shapes: &BTreeMap<String, (usize, usize, usize)>,
) -> Result<u64> {
    let mut total = 0u64;
    for pos in positions {
        let (c, h, w) = layer_shapes
            .get(&pos.layer)
            .ok_or_else(|| Error::UnknownLayer(pos.layer.clone()))?;
        if pos.channel >= *c {
            return Err(Error::PositionOutOfRange {
                layer: pos.layer.clone(),
                channel: pos.channel,
                channels: *c,
            });
        }
        total += mem_size * (*h as u64) * (*w as u64) * BYTES_PER_ELEMENT;
    }
    Ok(total)
}

/// Every channel of every trainable weight row except the classifier head
/// (the last weight row): the profile-independent upper bound used to size
/// feature standards at the spec level.
pub fn full_suffix_positions(spec: &ArchSpec, freeze: &CostFreeze) -> Result<PositionSet> {
    let resolved = resolve_spec(spec)?;
    let flags = trainable_flags(&resolved, freeze)?;
    let head = resolved
        .iter()
        .rposition(|r| r.kind.is_weight())
        .ok_or_else(|| Error::InvalidConfig("spec has no weight rows".into()))?;
    let mut set = PositionSet::new();
    for (i, r) in resolved.iter().enumerate() {
        if !flags[i] || !r.kind.is_weight() || i == head {
            continue;
        }
        let channels = match r.out_shape {
            Shape::Chw(c, ..) => c,
            Shape::Flat(d) => d,
        };
        for ch in 0..channels {
            set.insert(crate::lightcl::Position {
                layer: r.name.clone(),
                channel: ch,
            });
        }
    }
    Ok(set)
}

// ─── Spec derivation from built models ──────────────────────────────────────

impl<F: Scalar> Model<F> {
    /// Declarative row list equivalent to this model, for costing.
    pub fn to_arch_spec(&self) -> ArchSpec {
        let mut layers = Vec::new();
        // Producer row name per slot; slot 0 is the network input.
        let mut producer: Vec<String> = alloc::vec![String::from("input")];
        let mut prev_slot = 0usize;
        for (pc, instr) in self.instrs().iter().enumerate() {
            let from = if instr.input == prev_slot {
                None
            } else {
                Some(producer[instr.input].clone())
            };
            match instr.op {
                Op::Unit(u) => {
                    let unit = &self.units()[u];
                    match &unit.kind {
                        UnitKind::ConvBn { conv, .. } => {
                            layers.push(SpecLayer {
                                name: unit.name.clone(),
                                from,
                                kind: SpecLayerKind::Conv {
                                    out_channels: conv.out_ch,
                                    kernel: conv.kernel,
                                    stride: conv.stride,
                                    padding: conv.padding,
                                },
                            });
                            let norm_name = format!("{}.norm", unit.name);
                            layers.push(SpecLayer {
                                name: norm_name.clone(),
                                from: None,
                                kind: SpecLayerKind::Norm,
                            });
                            producer.push(norm_name);
                        }
                        UnitKind::Dense(lin) => {
                            layers.push(SpecLayer {
                                name: unit.name.clone(),
                                from,
                                kind: SpecLayerKind::Linear {
                                    out_features: lin.out_features,
                                },
                            });
                            producer.push(unit.name.clone());
                        }
                    }
                }
                Op::Relu => {
                    let name = format!("op{pc}.relu");
                    layers.push(SpecLayer {
                        name: name.clone(),
                        from,
                        kind: SpecLayerKind::Act,
                    });
                    producer.push(name);
                }
                Op::MaxPool2 => {
                    let name = format!("op{pc}.pool");
                    layers.push(SpecLayer {
                        name: name.clone(),
                        from,
                        kind: SpecLayerKind::MaxPool { kernel: 2 },
                    });
                    producer.push(name);
                }
                Op::GlobalAvgPool => {
                    let name = format!("op{pc}.avgpool");
                    layers.push(SpecLayer {
                        name: name.clone(),
                        from,
                        kind: SpecLayerKind::GlobalAvgPool,
                    });
                    producer.push(name);
                }
                Op::Flatten => {
                    let name = format!("op{pc}.flatten");
                    layers.push(SpecLayer {
                        name: name.clone(),
                        from,
                        kind: SpecLayerKind::Flatten,
                    });
                    producer.push(name);
                }
                Op::Add { skip } => {
                    let name = format!("op{pc}.add");
                    layers.push(SpecLayer {
                        name: name.clone(),
                        from,
                        kind: SpecLayerKind::Add {
                            with: producer[skip].clone(),
                        },
                    });
                    producer.push(name);
                }
            }
            prev_slot = instr.output;
        }
        let (c, h, w) = self.input_shape;
        ArchSpec {
            name: self.arch.as_str().to_string(),
            input: [c, h, w],
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn conv_row(name: &str, out: usize, kernel: usize, stride: usize, padding: usize) -> SpecLayer {
        SpecLayer {
            name: name.into(),
            from: None,
            kind: SpecLayerKind::Conv {
                out_channels: out,
                kernel,
                stride,
                padding,
            },
        }
    }

    #[test]
    fn conv_forward_flops_hand_count() {
        // 3x3 conv, 1 -> 1 channels, 4x4 input, no padding -> 2x2 output:
        // each output element is 9 multiplies + 9 adds, 4 elements -> 72.
        let spec = ArchSpec {
            name: "toy".into(),
            input: [1, 4, 4],
            layers: vec![conv_row("c", 1, 3, 1, 0)],
        };
        let resolved = resolve_spec(&spec).unwrap();
        assert_eq!(resolved[0].fwd_flops_per_sample, 72);
        assert_eq!(resolved[0].out_shape, Shape::Chw(1, 2, 2));
    }

    #[test]
    fn linear_param_bytes_hand_count() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: [4, 1, 1],
            layers: vec![
                SpecLayer {
                    name: "flat".into(),
                    from: None,
                    kind: SpecLayerKind::Flatten,
                },
                SpecLayer {
                    name: "fc".into(),
                    from: None,
                    kind: SpecLayerKind::Linear { out_features: 2 },
                },
            ],
        };
        let report = estimate_peak_memory(&spec, &CostFreeze::default(), 1, 0).unwrap();
        let fc = report.per_layer.iter().find(|r| r.layer_name == "fc").unwrap();
        assert_eq!(fc.param_bytes, (4 * 2 + 2) * 4);
    }

    #[test]
    fn fully_frozen_training_is_forward_only() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: [1, 4, 4],
            layers: vec![conv_row("c1", 2, 3, 1, 1), conv_row("c2", 2, 3, 1, 1)],
        };
        let plan = TrainingPlan {
            batch_size: 8,
            batches: 3,
            epochs: 2,
            tasks: 1,
            extra_forward_batches: 0,
        };
        let all = estimate_flops(&spec, &CostFreeze::default(), &plan, None).unwrap();
        let frozen = estimate_flops(
            &spec,
            &CostFreeze {
                fz_layer: Some("c2".into()),
            },
            &plan,
            None,
        )
        .unwrap();
        let resolved = resolve_spec(&spec).unwrap();
        let fwd: u64 = resolved.iter().map(|r| r.fwd_flops_per_sample).sum();
        assert_eq!(frozen, (fwd as u128) * 8 * 6);
        assert_eq!(all, (3 * fwd as u128) * 8 * 6);
    }

    #[test]
    fn frozen_rows_have_no_grads_or_stored_activations() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: [1, 4, 4],
            layers: vec![conv_row("c1", 2, 3, 1, 1), conv_row("c2", 2, 3, 1, 1)],
        };
        let report = estimate_peak_memory(
            &spec,
            &CostFreeze {
                fz_layer: Some("c2".into()),
            },
            4,
            0,
        )
        .unwrap();
        for row in &report.per_layer {
            assert_eq!(row.grad_bytes, 0, "{}", row.layer_name);
            assert!(!row.stored_for_backward, "{}", row.layer_name);
        }
        let params: u64 = report.per_layer.iter().map(|r| r.param_bytes).sum();
        assert_eq!(report.totals.peak_memory_bytes, params);
    }

    #[test]
    fn zero_batch_leaves_params_only() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: [1, 4, 4],
            layers: vec![conv_row("c1", 2, 3, 1, 1)],
        };
        let report = estimate_peak_memory(&spec, &CostFreeze::default(), 0, 0).unwrap();
        let params: u64 = report.per_layer.iter().map(|r| r.param_bytes).sum();
        assert_eq!(report.totals.peak_memory_bytes, params);
    }

    #[test]
    fn totals_recompute_from_rows() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: [3, 8, 8],
            layers: vec![
                conv_row("c1", 4, 3, 1, 1),
                SpecLayer {
                    name: "n1".into(),
                    from: None,
                    kind: SpecLayerKind::Norm,
                },
                SpecLayer {
                    name: "a1".into(),
                    from: None,
                    kind: SpecLayerKind::Act,
                },
                conv_row("c2", 4, 3, 1, 1),
                SpecLayer {
                    name: "add".into(),
                    from: None,
                    kind: SpecLayerKind::Add { with: "a1".into() },
                },
            ],
        };
        let batch = 16u64;
        let fs = 128u64;
        let report = estimate_peak_memory(
            &spec,
            &CostFreeze {
                fz_layer: Some("c1".into()),
            },
            batch,
            fs,
        )
        .unwrap();
        let params: u64 = report.per_layer.iter().map(|r| r.param_bytes).sum();
        let grads: u64 = report.per_layer.iter().map(|r| r.grad_bytes).sum();
        let stored: u64 = report
            .per_layer
            .iter()
            .filter(|r| r.stored_for_backward)
            .map(|r| r.activation_bytes)
            .sum();
        assert_eq!(
            report.totals.peak_memory_bytes,
            params + grads + stored * batch + fs
        );
        // Boundary extends through c1's norm and act rows.
        let a1 = report.per_layer.iter().find(|r| r.layer_name == "a1").unwrap();
        assert!(!a1.trainable);
        assert!(a1.stored_for_backward, "region input activation stays resident");
    }

    #[test]
    fn deeper_freeze_is_monotone() {
        let spec = ArchSpec {
            name: "toy".into(),
            input: [3, 16, 16],
            layers: vec![
                conv_row("c1", 8, 3, 1, 1),
                SpecLayer {
                    name: "a1".into(),
                    from: None,
                    kind: SpecLayerKind::Act,
                },
                conv_row("c2", 8, 3, 2, 1),
                SpecLayer {
                    name: "a2".into(),
                    from: None,
                    kind: SpecLayerKind::Act,
                },
                conv_row("c3", 8, 3, 2, 1),
            ],
        };
        let plan = TrainingPlan {
            batch_size: 4,
            batches: 10,
            epochs: 1,
            tasks: 1,
            extra_forward_batches: 0,
        };
        let mut prev_flops = u128::MAX;
        let mut prev_peak = u64::MAX;
        for fz in [None, Some("c1"), Some("c2"), Some("c3")] {
            let freeze = CostFreeze {
                fz_layer: fz.map(String::from),
            };
            let flops = estimate_flops(&spec, &freeze, &plan, None).unwrap();
            let peak = estimate_peak_memory(&spec, &freeze, 4, 0)
                .unwrap()
                .totals
                .peak_memory_bytes;
            assert!(flops <= prev_flops);
            assert!(peak <= prev_peak);
            prev_flops = flops;
            prev_peak = peak;
        }
    }

    #[test]
    fn fs_estimate_hand_count_and_empty() {
        let mut shapes = BTreeMap::new();
        shapes.insert(String::from("c"), (8usize, 4usize, 4usize));
        let empty = PositionSet::new();
        assert_eq!(fs_memory_estimate(&empty, 15, &shapes).unwrap(), 0);
        let mut one = PositionSet::new();
        one.insert(crate::lightcl::Position {
            layer: "c".into(),
            channel: 3,
        });
        // One 4x4 map, 15 samples, 4-byte elements.
        assert_eq!(fs_memory_estimate(&one, 15, &shapes).unwrap(), 960);
        let mut bad = PositionSet::new();
        bad.insert(crate::lightcl::Position {
            layer: "c".into(),
            channel: 8,
        });
        assert!(fs_memory_estimate(&bad, 15, &shapes).is_err());
    }

    #[test]
    fn add_shape_mismatch_and_unknown_refs_error() {
        let spec = ArchSpec {
            name: "bad".into(),
            input: [1, 8, 8],
            layers: vec![
                conv_row("c1", 2, 3, 1, 1),
                conv_row("c2", 4, 3, 1, 1),
                SpecLayer {
                    name: "add".into(),
                    from: None,
                    kind: SpecLayerKind::Add { with: "c1".into() },
                },
            ],
        };
        assert!(resolve_spec(&spec).is_err());
        let spec2 = ArchSpec {
            name: "bad2".into(),
            input: [1, 8, 8],
            layers: vec![SpecLayer {
                name: "x".into(),
                from: Some("nope".into()),
                kind: SpecLayerKind::Act,
            }],
        };
        assert!(resolve_spec(&spec2).is_err());
    }
}
