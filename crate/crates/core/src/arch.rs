//! Model families and their builders.
//!
//! Initialization draws every weight from one named substream in builder
//! order, so a (family, input shape, classes, seed) tuple pins the exact
//! parameter values on both f32 and f64 models.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, Linear};
use crate::linalg::conv_out;
use crate::model::{Instr, Model, Op, Unit, UnitKind};
use crate::rng::substream;
use crate::scalar::Scalar;

/// Supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// 4-stage residual network (two basic blocks per stage, widths
    /// 16/32/64/128), for 3-channel inputs with sides divisible by 8.
    MiniResnet,
    /// Two conv+pool stages and a hidden dense layer, for sides divisible by 4.
    SmallCnn,
    /// Two hidden dense layers.
    Mlp,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::MiniResnet => "mini_resnet",
            Arch::SmallCnn => "small_cnn",
            Arch::Mlp => "mlp",
        }
    }
}

impl core::fmt::Display for Arch {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mini_resnet" => Ok(Arch::MiniResnet),
            "small_cnn" => Ok(Arch::SmallCnn),
            "mlp" => Ok(Arch::Mlp),
            other => Err(Error::InvalidConfig(format!("unknown arch '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SlotShape {
    Chw(usize, usize, usize),
    Flat(usize),
}

struct Builder<F> {
    units: Vec<Unit<F>>,
    instrs: Vec<Instr>,
    shapes: Vec<SlotShape>,
    rng: ChaCha8Rng,
}

impl<F: Scalar> Builder<F> {
    fn new(input_shape: (usize, usize, usize), seed: u64) -> Self {
        let (c, h, w) = input_shape;
        Builder {
            units: Vec::new(),
            instrs: Vec::new(),
            shapes: vec![SlotShape::Chw(c, h, w)],
            rng: substream(seed, "init", &[]),
        }
    }

    fn uniform(&mut self, n: usize, bound: f64) -> Vec<F> {
        (0..n)
            .map(|_| {
                let u: f64 = self.rng.random();
                F::from_f64((2.0 * u - 1.0) * bound)
            })
            .collect()
    }

    fn push(&mut self, op: Op, input: usize, shape: SlotShape) -> usize {
        let output = self.shapes.len();
        self.instrs.push(Instr { op, input, output });
        self.shapes.push(shape);
        output
    }

    fn chw(&self, slot: usize) -> (usize, usize, usize) {
        match self.shapes[slot] {
            SlotShape::Chw(c, h, w) => (c, h, w),
            SlotShape::Flat(_) => panic!("slot is flat"),
        }
    }

    fn conv_bn(
        &mut self,
        name: &str,
        input: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> usize {
        let (in_ch, h, w) = self.chw(input);
        let fan_in = (in_ch * kernel * kernel) as f64;
        let weight = self.uniform(out_ch * in_ch * kernel * kernel, 1.0 / Float::sqrt(fan_in));
        let conv = Conv2d {
            weight,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        };
        let norm = BatchNorm::identity(out_ch);
        let unit = self.units.len();
        self.units.push(Unit {
            name: name.into(),
            kind: UnitKind::ConvBn { conv, norm },
            trainable: true,
        });
        let oh = conv_out(h, kernel, stride, padding);
        let ow = conv_out(w, kernel, stride, padding);
        self.push(Op::Unit(unit), input, SlotShape::Chw(out_ch, oh, ow))
    }

    fn dense(&mut self, name: &str, input: usize, out_features: usize) -> usize {
        let in_features = match self.shapes[input] {
            SlotShape::Flat(d) => d,
            SlotShape::Chw(c, _, _) => {
                // Dense directly after global average pooling.
                c
            }
        };
        let bound = 1.0 / Float::sqrt(in_features as f64);
        let weight = self.uniform(out_features * in_features, bound);
        let bias = self.uniform(out_features, bound);
        let unit = self.units.len();
        self.units.push(Unit {
            name: name.into(),
            kind: UnitKind::Dense(Linear {
                weight,
                bias,
                in_features,
                out_features,
            }),
            trainable: true,
        });
        self.push(Op::Unit(unit), input, SlotShape::Flat(out_features))
    }

    fn relu(&mut self, input: usize) -> usize {
        let shape = self.shapes[input];
        self.push(Op::Relu, input, shape)
    }

    fn maxpool2(&mut self, input: usize) -> usize {
        let (c, h, w) = self.chw(input);
        self.push(Op::MaxPool2, input, SlotShape::Chw(c, h / 2, w / 2))
    }

    fn global_avg_pool(&mut self, input: usize) -> usize {
        let (c, _, _) = self.chw(input);
        self.push(Op::GlobalAvgPool, input, SlotShape::Flat(c))
    }

    fn flatten(&mut self, input: usize) -> usize {
        let (c, h, w) = self.chw(input);
        self.push(Op::Flatten, input, SlotShape::Flat(c * h * w))
    }

    fn add(&mut self, input: usize, skip: usize) -> usize {
        debug_assert_eq!(self.shapes[input], self.shapes[skip]);
        let shape = self.shapes[input];
        self.push(Op::Add { skip }, input, shape)
    }

    fn finish(
        self,
        arch: Arch,
        input_shape: (usize, usize, usize),
        num_classes: usize,
    ) -> Result<Model<F>> {
        let slot_count = self.shapes.len();
        Model::from_parts(arch, input_shape, num_classes, self.units, self.instrs, slot_count)
    }
}

/// Build an initialized model. The seed fixes every weight; normalization
/// starts as the identity with zeroed running statistics.
pub fn build_model<F: Scalar>(
    arch: Arch,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    seed: u64,
) -> Result<Model<F>> {
    let (c, h, w) = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidConfig(format!(
            "degenerate input shape {c}x{h}x{w}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    match arch {
        Arch::MiniResnet => {
            if h % 8 != 0 || w % 8 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "mini_resnet needs sides divisible by 8, got {h}x{w}"
                )));
            }
            let mut b = Builder::new(input_shape, seed);
            let mut s = b.conv_bn("stem", 0, 16, 3, 1, 1);
            s = b.relu(s);
            let widths = [16usize, 32, 64, 128];
            for (si, &width) in widths.iter().enumerate() {
                let stage = si + 1;
                for blk in 1..=2 {
                    let stride = if stage > 1 && blk == 1 { 2 } else { 1 };
                    let entry = s;
                    let mut t = b.conv_bn(
                        &format!("stage{stage}.block{blk}.conv1"),
                        entry,
                        width,
                        3,
                        stride,
                        1,
                    );
                    t = b.relu(t);
                    t = b.conv_bn(&format!("stage{stage}.block{blk}.conv2"), t, width, 3, 1, 1);
                    let skip = if stride == 2 {
                        b.conv_bn(&format!("stage{stage}.block{blk}.proj"), entry, width, 1, 2, 0)
                    } else {
                        entry
                    };
                    t = b.add(t, skip);
                    s = b.relu(t);
                }
            }
            let pooled = b.global_avg_pool(s);
            b.dense("head", pooled, num_classes);
            b.finish(arch, input_shape, num_classes)
        }
        Arch::SmallCnn => {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "small_cnn needs sides divisible by 4, got {h}x{w}"
                )));
            }
            let mut b = Builder::new(input_shape, seed);
            let mut s = b.conv_bn("conv1", 0, 16, 3, 1, 1);
            s = b.relu(s);
            s = b.maxpool2(s);
            s = b.conv_bn("conv2", s, 32, 3, 1, 1);
            s = b.relu(s);
            s = b.maxpool2(s);
            s = b.flatten(s);
            s = b.dense("fc1", s, 128);
            s = b.relu(s);
            b.dense("head", s, num_classes);
            b.finish(arch, input_shape, num_classes)
        }
        Arch::Mlp => {
            let mut b = Builder::new(input_shape, seed);
            let mut s = b.flatten(0);
            s = b.dense("fc1", s, 256);
            s = b.relu(s);
            s = b.dense("fc2", s, 128);
            s = b.relu(s);
            b.dense("head", s, num_classes);
            b.finish(arch, input_shape, num_classes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn mini_resnet_has_expected_units() {
        let m = build_model::<f32>(Arch::MiniResnet, (3, 32, 32), 10, 0).unwrap();
        let names: Vec<&str> = m.unit_names().collect();
        assert_eq!(names.len(), 21);
        assert_eq!(names[0], "stem");
        assert!(names.contains(&"stage2.block1.proj"));
        assert!(!names.contains(&"stage1.block1.proj"));
        assert_eq!(names[names.len() - 1], "head");
        // Boundary used by the deeper-freeze preset sits before stage 4.
        assert!(m.unit_index("stage3.block2.conv2").unwrap() < m.unit_index("stage4.block1.conv1").unwrap());
    }

    #[test]
    fn forward_shapes_line_up() {
        for (arch, shape, classes) in [
            (Arch::MiniResnet, (3, 32, 32), 10),
            (Arch::SmallCnn, (1, 28, 28), 10),
            (Arch::Mlp, (1, 28, 28), 10),
        ] {
            let m = build_model::<f32>(arch, shape, classes, 1).unwrap();
            let x = Tensor::zeros(&[2, shape.0, shape.1, shape.2]);
            let y = m.forward_eval(&x).unwrap();
            assert_eq!(y.shape(), &[2, classes], "{arch}");
        }
    }

    #[test]
    fn seeds_control_initialization() {
        let a = build_model::<f32>(Arch::SmallCnn, (1, 28, 28), 10, 7).unwrap();
        let b = build_model::<f32>(Arch::SmallCnn, (1, 28, 28), 10, 7).unwrap();
        let c = build_model::<f32>(Arch::SmallCnn, (1, 28, 28), 10, 8).unwrap();
        assert_eq!(a.unit_digest(0), b.unit_digest(0));
        assert_ne!(a.unit_digest(0), c.unit_digest(0));
    }

    #[test]
    fn init_is_fan_in_bounded() {
        let m = build_model::<f64>(Arch::SmallCnn, (1, 28, 28), 10, 3).unwrap();
        let i = m.unit_index("conv1").unwrap();
        let bound = 1.0 / ((1.0 * 9.0) as f64).sqrt();
        for &v in m.unit_param_slices(i)[0] {
            assert!(v.abs() <= bound);
        }
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(build_model::<f32>(Arch::MiniResnet, (3, 30, 30), 10, 0).is_err());
        assert!(build_model::<f32>(Arch::SmallCnn, (1, 27, 27), 10, 0).is_err());
        assert!(build_model::<f32>(Arch::Mlp, (1, 28, 28), 1, 0).is_err());
    }
}
