//! Scalar abstraction so the signal and model math can run at f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar for DSP and model math: f32 or f64.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + rustfft::FftNum
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn from_f(v: f64) -> Self;
    fn to_f(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f(self) -> f64 {
        self
    }
}
