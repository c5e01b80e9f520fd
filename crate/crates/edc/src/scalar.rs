//! Floating-point scalar abstraction for the entropy arithmetic.
//!
//! The information-theoretic core works for any IEEE float; the profiling
//! pipeline pins `f64` (see the aliases at the crate root). `f32` stays
//! supported because replay files store single-precision logits and the
//! generic code is what guarantees the upcast path behaves identically.

use num_traits::{Float, FloatConst, FromPrimitive};

/// Scalar type usable by the entropy core: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + core::fmt::Debug + core::fmt::Display + Send + Sync + 'static
{
    /// Tolerance for "probabilities sum to one" validation, scaled to the
    /// precision the type can actually deliver for vocabulary-sized sums.
    fn sum_tolerance() -> Self;

    fn from_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 representable in scalar")
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn sum_tolerance() -> f32 {
        1e-4
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn sum_tolerance() -> f64 {
        1e-9
    }

    fn as_f64(self) -> f64 {
        self
    }
}
