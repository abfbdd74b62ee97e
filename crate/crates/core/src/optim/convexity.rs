//! Empirical chord test of convexity.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// A chord where `f(t·a + (1−t)·b)` exceeds the interpolated value.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub t: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub chords: usize,
    /// Largest `f(mid) − interpolation` seen, violating or not.
    pub max_excess: f64,
    pub violations: Vec<Violation>,
}

impl ConvexityReport {
    pub fn is_convex(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws `chords` random pairs in `[−scale, scale]^dim` and `t ∈ (0, 1)` and
/// checks `f(t·a + (1−t)·b) ≤ t·f(a) + (1−t)·f(b) + tol`.
pub fn check_convexity<F>(mut f: F, dim: usize, chords: usize, scale: f64, tol: f64, seed: u64) -> Result<ConvexityReport>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConvexityReport { chords, max_excess: f64::NEG_INFINITY, violations: Vec::new() };
    for _ in 0..chords {
        let a = DVector::from_fn(dim, |_, _| rng.random_range(-scale..scale));
        let b = DVector::from_fn(dim, |_, _| rng.random_range(-scale..scale));
        let t: f64 = rng.random_range(0.0..1.0);
        let mid = &a * t + &b * (1.0 - t);
        let excess = f(&mid)? - (t * f(&a)? + (1.0 - t) * f(&b)?);
        report.max_excess = report.max_excess.max(excess);
        if excess > tol {
            report.violations.push(Violation { a, b, t, excess });
        }
    }
    Ok(report)
}
