//! Scalar abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the selectors, pruner and fitting routines are generic over.
///
/// Implemented for `f32` and `f64`. Kernels accumulate in the scalar type itself,
/// so results for a given `S` are reproducible bit for bit regardless of threading.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossless promotion of an 8-bit pixel value.
    fn lift_u8(v: u8) -> Self;

    /// Conversion from a stored `f32` sample (pixels, features).
    fn lift_f32(v: f32) -> Self;

    /// Narrowing to the `f32` on-disk representation.
    fn narrow_f32(self) -> f32;

    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).unwrap_or_else(Self::infinity)
    }
}

impl Scalar for f32 {
    #[inline]
    fn lift_u8(v: u8) -> Self {
        f32::from(v)
    }
    #[inline]
    fn lift_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn narrow_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn lift_u8(v: u8) -> Self {
        f64::from(v)
    }
    #[inline]
    fn lift_f32(v: f32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn narrow_f32(self) -> f32 {
        self as f32
    }
}
