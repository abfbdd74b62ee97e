//! Synthetic confounded data: sparse linear signal plus strongly correlated noise.

use cpr_core::model::{Dataset, SampleKernel};
use cpr_core::{CprError, Result};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Noise covariance recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SideRecipe {
    /// `Σ_side = 3AᵀA + 0.6I + 3·𝟙𝟙ᵀ` with `A` uniform on `[−1, 1]^{r×n}`.
    #[default]
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    /// Number of unit weights in the generating vector.
    pub k: usize,
    /// Rows of the latent matrix `A`.
    pub side_rank: usize,
    pub seed: u64,
    pub recipe: SideRecipe,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { d: 50, n: 200, k: 10, side_rank: 50, seed: 20, recipe: SideRecipe::Standard }
    }
}

impl SyntheticSpec {
    pub fn with_k(self, k: usize) -> Self {
        Self { k, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    /// Features, labels, and `Σ_side` attached as the sample kernel.
    pub data: Dataset<f64>,
    pub true_w: DVector<f64>,
    pub side_cov: DMatrix<f64>,
}

/// Draws `A`, `X`, the support of `w`, and the noise `ε ~ N(0, Σ_side)`
/// (via Cholesky) from one ChaCha8 stream; labels are `sign(Xᵀw + ε)`
/// with `sign(0) = +1`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.k > spec.d {
        return Err(CprError::InvalidInput(format!("k = {} exceeds d = {}", spec.k, spec.d)));
    }
    if spec.n == 0 || spec.d == 0 {
        return Err(CprError::InvalidInput("d and n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let a = DMatrix::from_fn(spec.side_rank, n, |_, _| rng.random_range(-1.0..=1.0));
    let side_cov = {
        let mut s = a.tr_mul(&a) * 3.0;
        s.add_scalar_mut(3.0);
        for i in 0..n {
            s[(i, i)] += 0.6;
        }
        s
    };
    let x = DMatrix::from_fn(spec.d, n, |_, _| rng.random_range(-1.0..=1.0));
    let mut true_w = DVector::zeros(spec.d);
    for i in sample(&mut rng, spec.d, spec.k) {
        true_w[i] = 1.0;
    }
    let chol = side_cov.clone().cholesky().ok_or(CprError::IndefiniteCovariance { jitter: 0.0 })?;
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = x.tr_mul(&true_w) + chol.l() * z;
    let labels = f.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect();
    let names = (0..spec.d).map(|i| format!("x{}", i + 1)).collect();
    let data = Dataset::new(x, labels)?.with_names(names)?.with_sample_kernel(SampleKernel::new(side_cov.clone())?)?;
    Ok(Synthetic { data, true_w, side_cov })
}

/// Random orthant problem: `μ ~ U[−2, 2]ⁿ`, `Σ = AAᵀ/n + 0.5 I` with `A ~ U[−1, 1]^{n×n}`.
pub fn orthant_problem<R: Rng>(rng: &mut R, n: usize) -> (DVector<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let sigma = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
    let mu = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    (mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_and_shapes() {
        let s = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(s.data.d(), 50);
        assert_eq!(s.data.n(), 200);
        assert_eq!(s.true_w.iter().filter(|&&w| w == 1.0).count(), 10);
        assert_eq!(s.true_w.iter().filter(|&&w| w == 0.0).count(), 40);
        assert!(s.data.x().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn side_covariance_is_psd_with_floor() {
        for seed in 0..3 {
            let s = generate_synthetic(&SyntheticSpec { n: 60, seed, ..SyntheticSpec::default() }).unwrap();
            assert!(s.side_cov.diagonal().iter().all(|&v| v >= 0.6));
            // 3AᵀA + 3𝟙𝟙ᵀ alone is PSD.
            let mut core = s.side_cov.clone();
            for i in 0..60 {
                core[(i, i)] -= 0.6;
            }
            let min = core.symmetric_eigenvalues().min();
            assert!(min >= -1e-8 * core.norm(), "{min}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SyntheticSpec { seed: 9, ..SyntheticSpec::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a.data.x(), b.data.x());
        assert_eq!(a.data.labels(), b.data.labels());
        assert_eq!(a.true_w, b.true_w);
        let c = generate_synthetic(&spec.with_seed(10)).unwrap();
        assert_ne!(a.data.x(), c.data.x());
    }

    #[test]
    fn no_signal_and_bad_k() {
        let s = generate_synthetic(&SyntheticSpec::default().with_k(0)).unwrap();
        assert!(s.true_w.iter().all(|&w| w == 0.0));
        assert!(generate_synthetic(&SyntheticSpec::default().with_k(51)).is_err());
    }
}
