//! Floating-point scalar abstraction shared by every numeric routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distr::uniform::SampleUniform;

/// Real scalar type the networks are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + SampleUniform
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
    /// Gauss error function.
    fn erf(self) -> Self;

    /// Lossy conversion from `f64`; exact for `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f64 {
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_matches_known_values() {
        assert!((Scalar::erf(0.0f64)).abs() < 1e-15);
        assert!((Scalar::erf(1.0f64) - 0.842_700_792_949_714_9).abs() < 1e-14);
        assert!((Scalar::erf(-1.0f32) + 0.842_700_8).abs() < 1e-6);
    }

    #[test]
    fn conversions_roundtrip() {
        assert_eq!(f64::of(0.25).as_f64(), 0.25);
        assert_eq!(f32::of(0.5).as_f64(), 0.5);
    }
}
