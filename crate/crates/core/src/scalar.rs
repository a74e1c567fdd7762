//! Scalar abstraction shared by the geometry, observation and learning code.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Name recorded in checkpoints so a file is never loaded at the wrong width.
    const NAME: &'static str;

    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("real to f64")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// Wraps an angle into `(-pi, pi]`.
#[inline]
pub fn normalize_angle<T: Real>(angle: T) -> T {
    let two_pi = T::TAU();
    let wrapped = angle - two_pi * ((angle - T::PI()) / two_pi).ceil();
    // ceil can land exactly on -pi after rounding
    if wrapped <= -T::PI() {
        wrapped + two_pi
    } else {
        wrapped
    }
}
