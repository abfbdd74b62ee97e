//! Brute-force reference values for orthant moments (small `n` only).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ep::OrthantMoments;
use crate::error::{CprError, Result};
use crate::special::{norm_quantile_from_log, positive_tail};

/// Largest dimension the tensor quadrature accepts.
pub const MAX_QUADRATURE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMethod {
    /// Tensor Gauss–Legendre over the sequentially conditioned
    /// (Genz-transformed) integral with `nodes` points per dimension.
    Quadrature { nodes: usize },
    /// Rejection sampling from `N(μ, Σ)`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Reference moments with error estimates.
#[derive(Debug, Clone)]
pub struct OracleEstimate {
    pub moments: OrthantMoments<f64>,
    /// Error estimate of the mass (absolute, not log).
    pub mass_error: f64,
    /// Per-coordinate error estimate of the mean.
    pub mean_error: DVector<f64>,
}

/// Ground-truth orthant moments by quadrature (`n ≤ 4`) or Monte Carlo.
///
/// Quadrature error estimates compare against a half-resolution rule;
/// Monte-Carlo estimates are standard errors.
pub fn orthant_oracle(mu: &DVector<f64>, sigma: &DMatrix<f64>, method: OracleMethod) -> Result<OracleEstimate> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(CprError::DimensionMismatch("oracle μ and Σ disagree".into()));
    }
    let l = sigma.clone().cholesky().ok_or(CprError::IndefiniteCovariance { jitter: 0.0 })?.l();
    match method {
        OracleMethod::Quadrature { nodes } => {
            if n > MAX_QUADRATURE_DIM {
                return Err(CprError::InvalidInput(format!("quadrature oracle supports n ≤ {MAX_QUADRATURE_DIM}, got {n}")));
            }
            if nodes < 2 {
                return Err(CprError::InvalidInput("quadrature needs at least 2 nodes".into()));
            }
            let fine = genz_quadrature(mu, &l, nodes);
            let coarse = genz_quadrature(mu, &l, nodes / 2);
            let mass = fine.log_mass.exp();
            Ok(OracleEstimate {
                mass_error: (mass - coarse.log_mass.exp()).abs(),
                mean_error: (&fine.mean - &coarse.mean).abs(),
                moments: fine,
            })
        }
        OracleMethod::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(CprError::InvalidInput("Monte Carlo budget must be positive".into()));
            }
            monte_carlo(mu, &l, samples, seed)
        }
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

struct Accumulator {
    log_scale: f64,
    mass: f64,
    first: DVector<f64>,
    second: DMatrix<f64>,
}

impl Accumulator {
    fn add(&mut self, log_w: f64, eu: &DVector<f64>, euu: &DMatrix<f64>) {
        if log_w == f64::NEG_INFINITY {
            return;
        }
        if log_w > self.log_scale {
            let r = (self.log_scale - log_w).exp();
            self.mass *= r;
            self.first *= r;
            self.second *= r;
            self.log_scale = log_w;
        }
        let w = (log_w - self.log_scale).exp();
        self.mass += w;
        self.first.axpy(w, eu, 1.0);
        self.second += euu * w;
    }
}

fn genz_quadrature(mu: &DVector<f64>, l: &DMatrix<f64>, nodes: usize) -> OrthantMoments<f64> {
    let n = mu.len();
    // t = 1 - (1 - s)³ flattens the logarithmic endpoint singularity of the inverse-CDF map.
    let (s, ws) = gauss_legendre(nodes);
    let t: Vec<f64> = s.iter().map(|&s| 1.0 - (1.0 - s).powi(3)).collect();
    let w: Vec<f64> = s.iter().zip(&ws).map(|(&s, &w)| 3.0 * w * (1.0 - s).powi(2)).collect();
    let mut acc = Accumulator {
        log_scale: f64::NEG_INFINITY,
        mass: 0.0,
        first: DVector::zeros(n),
        second: DMatrix::zeros(n, n),
    };
    let mut u = vec![0.0; n];
    recurse(mu, l, &t, &w, 0, 0.0, &mut u, &mut acc);
    let eu = &acc.first / acc.mass;
    let euu = &acc.second / acc.mass;
    let cov_u = &euu - &eu * eu.transpose();
    let mean = mu + l * &eu;
    let cov = l * cov_u * l.transpose();
    OrthantMoments { mean, covariance: (&cov + cov.transpose()) * 0.5, log_mass: acc.log_scale + acc.mass.ln() }
}

/// Lower integration bound for `u_dim` given the earlier coordinates.
fn lower_bound(mu: &DVector<f64>, l: &DMatrix<f64>, dim: usize, u: &[f64]) -> f64 {
    let mut s = mu[dim];
    for j in 0..dim {
        s += l[(dim, j)] * u[j];
    }
    -s / l[(dim, dim)]
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    mu: &DVector<f64>,
    l: &DMatrix<f64>,
    t: &[f64],
    w: &[f64],
    dim: usize,
    log_w: f64,
    u: &mut [f64],
    acc: &mut Accumulator,
) {
    let n = mu.len();
    let a = lower_bound(mu, l, dim, u);
    // U > a for standard normal U is N(-a, 1) shifted: U - a ~ N(-a,1)|_{>0}
    let tail = positive_tail(-a);
    if dim + 1 == n {
        let m = a + tail.mean;
        let mut eu = DVector::zeros(n);
        let mut euu = DMatrix::zeros(n, n);
        for i in 0..n {
            let ui = if i == dim { m } else { u[i] };
            eu[i] = ui;
        }
        for i in 0..n {
            for j in 0..n {
                euu[(i, j)] = eu[i] * eu[j];
            }
        }
        euu[(dim, dim)] += tail.variance;
        acc.add(log_w + tail.log_mass, &eu, &euu);
        return;
    }
    for (&ti, &wi) in t.iter().zip(w) {
        // upper-tail inversion: P(U > u) = q (1 - t)
        let log_upper = tail.log_mass + (1.0 - ti).ln();
        u[dim] = -norm_quantile_from_log(log_upper);
        recurse(mu, l, t, w, dim + 1, log_w + tail.log_mass + wi.ln(), u, acc);
    }
}

fn monte_carlo(mu: &DVector<f64>, l: &DMatrix<f64>, samples: usize, seed: u64) -> Result<OracleEstimate> {
    let n = mu.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut accepted = 0usize;
    let mut sum = DVector::zeros(n);
    let mut sum_sq = DMatrix::zeros(n, n);
    let mut z = DVector::zeros(n);
    for _ in 0..samples {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let eps = mu + l * &z;
        if eps.iter().all(|&e| e > 0.0) {
            accepted += 1;
            sum += &eps;
            sum_sq.ger(1.0, &eps, &eps, 1.0);
        }
    }
    if accepted < 2 {
        return Err(CprError::Numerical(format!("only {accepted} of {samples} Monte Carlo samples in the orthant")));
    }
    let p = accepted as f64 / samples as f64;
    let mean = &sum / accepted as f64;
    let cov = (&sum_sq / accepted as f64 - &mean * mean.transpose()) * (accepted as f64 / (accepted - 1) as f64);
    let mean_error = cov.diagonal().map(|v| (v.max(0.0) / accepted as f64).sqrt());
    Ok(OracleEstimate {
        mass_error: (p * (1.0 - p) / samples as f64).sqrt(),
        mean_error,
        moments: OrthantMoments { mean, covariance: cov, log_mass: p.ln() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthant::truncnorm::truncnorm_moments_1d;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
        let m6: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert_relative_eq!(m6, 1.0 / 7.0, epsilon = 1e-14);
    }

    #[test]
    fn one_dimension_is_exact() {
        for &(m, v) in &[(0.0, 1.0), (-2.0, 0.5), (3.0, 4.0)] {
            let est = orthant_oracle(
                &DVector::from_element(1, m),
                &DMatrix::from_element(1, 1, v),
                OracleMethod::Quadrature { nodes: 8 },
            )
            .unwrap();
            let t = truncnorm_moments_1d(m, v).unwrap();
            assert_relative_eq!(est.moments.log_mass, t.log_mass, epsilon = 1e-8);
            assert_relative_eq!(est.moments.mean[0], t.mean, epsilon = 1e-8);
            assert_relative_eq!(est.moments.covariance[(0, 0)], t.variance, epsilon = 1e-8);
        }
    }

    #[test]
    fn independent_pair_factorizes() {
        let mu = DVector::from_vec(vec![0.3, -0.8]);
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![1.5, 0.7]));
        let est = orthant_oracle(&mu, &sigma, OracleMethod::Quadrature { nodes: 200 }).unwrap();
        let a = truncnorm_moments_1d(0.3, 1.5).unwrap();
        let b = truncnorm_moments_1d(-0.8, 0.7).unwrap();
        assert_relative_eq!(est.moments.log_mass, a.log_mass + b.log_mass, epsilon = 1e-10);
        assert_relative_eq!(est.moments.mean[0], a.mean, epsilon = 1e-4);
        assert_relative_eq!(est.moments.mean[1], b.mean, epsilon = 1e-10);
        assert_relative_eq!(est.moments.covariance[(0, 0)], a.variance, epsilon = 1e-3);
        assert!(est.moments.covariance[(0, 1)].abs() < 1e-3);
    }

    #[test]
    fn bivariate_orthant_closed_form() {
        // P(X>0, Y>0) = 1/4 + asin(ρ)/(2π) for zero means.
        let rho: f64 = 0.5;
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let est = orthant_oracle(&DVector::zeros(2), &sigma, OracleMethod::Quadrature { nodes: 100 }).unwrap();
        let exact = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        assert_relative_eq!(est.moments.log_mass.exp(), exact, epsilon = 1e-10);
    }

    #[test]
    fn three_dimensions_monte_carlo_agrees() {
        let mu = DVector::from_vec(vec![0.2, -0.4, 0.5]);
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.4, -0.2, 0.4, 1.5, 0.3, -0.2, 0.3, 0.8]);
        let q = orthant_oracle(&mu, &sigma, OracleMethod::Quadrature { nodes: 120 }).unwrap();
        let mc = orthant_oracle(&mu, &sigma, OracleMethod::MonteCarlo { samples: 400_000, seed: 11 }).unwrap();
        let mass_gap = (q.moments.log_mass.exp() - mc.moments.log_mass.exp()).abs();
        assert!(mass_gap <= 3.0 * mc.mass_error, "{mass_gap} vs {}", mc.mass_error);
        for i in 0..3 {
            let gap = (q.moments.mean[i] - mc.moments.mean[i]).abs();
            assert!(gap <= 3.0 * mc.mean_error[i] + q.mean_error[i], "coordinate {i}: {gap}");
        }
    }

    #[test]
    fn rejects_large_dimension() {
        let n = 5;
        let r = orthant_oracle(&DVector::zeros(n), &DMatrix::identity(n, n), OracleMethod::Quadrature { nodes: 4 });
        assert!(r.is_err());
    }
}
