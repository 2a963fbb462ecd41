//! Scalar abstraction the numeric modules are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Floating-point scalar for scores, relevances, weights, and gradients.
///
/// Implemented for `f32` and `f64`. The tolerances quoted throughout the
/// documentation assume `f64`; `f32` carries correspondingly less precision.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Conversion from `f64`, used for constants and injected noise.
    fn from_f64(x: f64) -> Self;

    /// Widening conversion to `f64`, used at serialization boundaries.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
