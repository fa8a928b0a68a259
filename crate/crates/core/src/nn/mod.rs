//! Minimal dense layers with hand-written backward passes.
//!
//! Every trainable tensor lives in one flat [`ParamStore`] so that the
//! optimizer, checkpoints and finite-difference checks can treat the whole
//! model as a single vector. Layers only hold [`ParamId`] handles into it.

mod adam;
mod conv;
mod layers;
mod params;

pub use adam::{Adam, AdamConfig};
pub use conv::{avg_pool2, avg_pool2_backward, Conv2d, ConvCache, FeatureMap};
pub use layers::{silu, silu_grad, silu_with_grad, Linear, Mlp, MlpCache};
pub use params::{Gradients, ParamEntry, ParamId, ParamStore};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Scalar type a model can be instantiated with.
///
/// Training runs in `f32`; the gradient checks need `f64`.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;

    /// Logistic function. The `f32` version uses a branch-free exponential
    /// that vectorizes; `f64` keeps the library `exp`.
    fn sigmoid(self) -> Self;
}

/// `exp(x)` for `f32` via range reduction and a degree-6 polynomial,
/// accurate to a few ulp on `[-87, 87]` and saturating outside.
#[inline]
fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0;
    let x = x.max(-87.0).min(87.0);
    let shifted = x * LOG2E + ROUND;
    // Low mantissa bits of `shifted` hold round(x * log2 e).
    let bits = shifted.to_bits();
    let n = shifted - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.987_569_1e-4;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5e-1;
    let p = p * r * r + r + 1.0;
    let scale = f32::from_bits(bits.wrapping_sub(ROUND.to_bits()).wrapping_add(127) << 23);
    p * scale
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn sigmoid(self) -> Self {
        1.0 / (1.0 + exp_f32(-self))
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
    #[inline]
    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
}
