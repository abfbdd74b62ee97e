use crate::error::{CprError, Result};
use crate::scalar::Scalar;
use crate::special::positive_tail;

/// Mass and moments of `N(mean, variance)` restricted to `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments<T> {
    pub mass: T,
    pub log_mass: T,
    pub mean: T,
    pub variance: T,
}

/// Moments of a univariate Gaussian truncated to the positive half line.
///
/// Stable for means far below zero: the deep tail uses the Mills-ratio
/// continued fraction, so the result never overflows to NaN.
pub fn truncnorm_moments_1d<T: Scalar>(mean: T, variance: T) -> Result<TruncatedMoments<T>> {
    let v = variance.to_f64_lossy();
    let m = mean.to_f64_lossy();
    if !(v > 0.0) || !v.is_finite() {
        return Err(CprError::InvalidInput(format!("variance {v} must be positive")));
    }
    if !m.is_finite() {
        return Err(CprError::NonFinite("truncated normal mean"));
    }
    let sd = v.sqrt();
    let tail = positive_tail(m / sd);
    Ok(TruncatedMoments {
        mass: T::of(tail.log_mass.exp()),
        log_mass: T::of(tail.log_mass),
        mean: T::of(sd * tail.mean),
        variance: T::of(v * tail.variance),
    })
}
