use core::fmt::Debug;
use core::iter::Sum;

use num_traits::{Float, NumAssign};

/// Element type for all tensors. The training pipeline runs `f32`; gradient
/// verification runs `f64` through the same code paths.
pub trait Scalar: Float + NumAssign + Sum + Default + Debug + Copy + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Bit pattern widened to u64, for bit-exact equality checks.
    fn bits(self) -> u64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn bits(self) -> u64 {
        self.to_bits()
    }
}
