//! Floating point abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the solvers are generic over: `f32` or `f64`.
///
/// Special functions (error function, normal tails) are evaluated in `f64`
/// and rounded back, so `f32` instantiations trade storage and matrix
/// arithmetic precision, not tail accuracy.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the concrete type.
    fn epsilon() -> Self;

    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Scalar for f64 {
    #[inline]
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

impl Scalar for f32 {
    #[inline]
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half<T: Scalar>() -> T {
        T::of(1.0) / T::of(2.0)
    }

    #[test]
    fn literal_conversion_round_trips() {
        assert_eq!(half::<f64>(), 0.5);
        assert_eq!(half::<f32>(), 0.5f32);
        assert!(f32::of(1e300).to_f64_lossy().is_infinite());
        assert!(!f64::of(f64::NAN).is_finite_value());
    }
}
