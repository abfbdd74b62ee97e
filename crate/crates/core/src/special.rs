//! Standard normal density, distribution and tail helpers in `f64`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1/sqrt(2π)`
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this standardized bound the tail quantities come from the Mills-ratio
/// continued fraction instead of `erfc`.
const DEEP_TAIL: f64 = -6.0;
const CF_TERMS: usize = 240;

pub fn norm_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `log Φ(z)`, accurate in both tails.
pub fn log_norm_cdf(z: f64) -> f64 {
    if z < DEEP_TAIL {
        positive_tail(z).log_mass
    } else if z > 0.0 {
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// Quantities of a standard normal restricted to `(-z, ∞)`, i.e. of
/// `N(z, 1)` restricted to the positive half line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositiveTail {
    /// `log Φ(z)`
    pub log_mass: f64,
    /// Inverse Mills ratio `φ(z)/Φ(z)`.
    pub ratio: f64,
    /// Mean of the truncated variable, `z + ratio`.
    pub mean: f64,
    /// Variance of the truncated variable, `1 - z·ratio - ratio²`.
    pub variance: f64,
}

/// Tail moments for a unit-variance Gaussian with mean `z` truncated to `(0, ∞)`.
pub fn positive_tail(z: f64) -> PositiveTail {
    if z.is_nan() {
        return PositiveTail { log_mass: f64::NAN, ratio: f64::NAN, mean: f64::NAN, variance: f64::NAN };
    }
    if z < DEEP_TAIL {
        // Φ(-x)/φ(x) = 1/(x + f1), f_k = k/(x + f_{k+1})
        let x = -z;
        let mut f_next = 0.0;
        let mut f2 = 0.0;
        for k in (1..=CF_TERMS).rev() {
            let f = k as f64 / (x + f_next);
            if k == 2 {
                f2 = f;
            }
            f_next = f;
        }
        let f1 = f_next;
        let ratio = x + f1;
        PositiveTail {
            log_mass: -0.5 * x * x - LN_SQRT_2PI - (x + f1).ln(),
            ratio,
            mean: f1,
            // 1 - z r - r² rewritten without cancellation
            variance: f1 * (f2 - f1),
        }
    } else {
        let erfc = libm::erfc(-z * FRAC_1_SQRT_2);
        let mass = 0.5 * erfc;
        let ratio = if z > 38.0 { 0.0 } else { norm_pdf(z) / mass };
        let log_mass = if z > 0.0 { (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p() } else { mass.ln() };
        let mean = z + ratio;
        PositiveTail { log_mass, ratio, mean, variance: (1.0 - ratio * mean).max(0.0) }
    }
}

/// Standard normal quantile for `p ∈ (0, 1)`; `±∞` at the end points.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

/// Quantile of the upper tail: returns `x` with `1 - Φ(x) = q`, accurate for tiny `q`.
pub fn norm_upper_quantile(q: f64) -> f64 {
    -norm_quantile(q)
}

/// Quantile from `log p`, usable when `p` underflows.
pub fn norm_quantile_from_log(log_p: f64) -> f64 {
    if log_p > -std::f64::consts::LN_2 {
        return norm_quantile(log_p.exp());
    }
    lower_quantile_log(log_p)
}

fn lower_quantile(p: f64) -> f64 {
    lower_quantile_log(p.ln())
}

fn lower_quantile_log(target: f64) -> f64 {
    if target == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    // Abramowitz & Stegun 26.2.23 start, then Newton on log Φ.
    let t = (-2.0 * target).sqrt();
    let mut x = -(t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t));
    for _ in 0..50 {
        let tail = positive_tail(x);
        let step = (tail.log_mass - target) / tail.ratio;
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// `sqrt(2/π)`, the half-normal mean.
pub fn half_normal_mean() -> f64 {
    (2.0 / PI).sqrt()
}
