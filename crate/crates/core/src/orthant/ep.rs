//! Expectation propagation for a Gaussian restricted to the positive orthant.
//!
//! The target is `N(ε; μ, Σ) Π_i 1[ε_i > 0]`. Each constraint gets a
//! univariate Gaussian site `exp(-½ τ̃_i ε_i² + ν̃_i ε_i)`, so the global
//! approximation is `q = N(μ_q, Σ_q)` with `Σ_q = (Σ⁻¹ + T̃)⁻¹` and
//! `μ_q = Σ_q (Σ⁻¹ μ + ν̃)`. Sites are refined one at a time (cavity,
//! moment match, damped update, rank-one refresh of `q`), and `q` is
//! recomputed from a Cholesky factorization after every sweep.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::truncnorm::truncnorm_moments_1d;
use crate::error::{CprError, Result};
use crate::scalar::Scalar;

/// Moments and log normalizer of the orthant-truncated Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantMoments<T: Scalar> {
    pub mean: DVector<T>,
    pub covariance: DMatrix<T>,
    pub log_mass: T,
}

impl<T: Scalar> OrthantMoments<T> {
    /// `μ_p − μ`
    pub fn mean_shift(&self, mu: &DVector<T>) -> DVector<T> {
        &self.mean - mu
    }
}

/// Site parameters carried between EP calls for warm starts.
#[derive(Debug, Clone, PartialEq)]
pub struct EpSiteState<T: Scalar> {
    pub site_precisions: DVector<T>,
    pub site_shifts: DVector<T>,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Scalar> EpSiteState<T> {
    pub fn empty(n: usize) -> Self {
        Self { site_precisions: DVector::zeros(n), site_shifts: DVector::zeros(n), converged: false, iterations: 0 }
    }

    pub fn len(&self) -> usize {
        self.site_precisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.site_precisions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpOptions {
    /// Stop when the largest absolute site-parameter change in a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Fraction of the proposed site update that is applied. A cold start
    /// takes its first sweep undamped.
    pub damping: f64,
}

impl Default for EpOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_sweeps: 50, damping: 0.7 }
    }
}

impl EpOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// Full EP result: moments, final sites, and the factor `L` of
/// `B = I + S^{½} Σ S^{½}` (with `S = diag(τ̃)`) for curvature computations.
#[derive(Debug, Clone)]
pub struct EpSolution<T: Scalar> {
    pub moments: OrthantMoments<T>,
    pub sites: EpSiteState<T>,
    sqrt_prec: DVector<T>,
    chol_b: Cholesky<T, Dyn>,
    /// `ν̃ − τ̃∘μ`
    shifted_nat: DVector<T>,
}

impl<T: Scalar> EpSolution<T> {
    /// `Σ⁻¹ (μ_q − μ)` without forming `Σ⁻¹`.
    pub fn precision_mean_shift(&self, sigma: &DMatrix<T>) -> DVector<T> {
        // Σ⁻¹Σ_q = I − S^{½} B⁻¹ S^{½} Σ
        let nu = &self.shifted_nat;
        let t = self.chol_b.solve(&(sigma * nu).component_mul(&self.sqrt_prec));
        nu - t.component_mul(&self.sqrt_prec)
    }

    /// `Σ⁻¹ − Σ⁻¹ Σ_q Σ⁻¹ = S^{½} B⁻¹ S^{½}`, the curvature of `−log Z` in `μ`.
    pub fn curvature(&self) -> DMatrix<T> {
        let n = self.sqrt_prec.len();
        let mut inv = self.chol_b.inverse();
        for j in 0..n {
            for i in 0..n {
                inv[(i, j)] *= self.sqrt_prec[i] * self.sqrt_prec[j];
            }
        }
        inv
    }
}

/// Approximate moments and log mass of `N(μ, Σ)` over the positive orthant.
///
/// `warm_start` sites (from an earlier call at a nearby `μ`) usually make
/// the first sweep the last. Non-convergence is not an error: the final
/// iterate is returned with `converged = false`.
pub fn ep_moments<T: Scalar>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    warm_start: Option<&EpSiteState<T>>,
    opts: &EpOptions,
) -> Result<(OrthantMoments<T>, EpSiteState<T>)> {
    let sol = ep_solve(mu, sigma, warm_start, opts)?;
    Ok((sol.moments, sol.sites))
}

/// [`ep_moments`] keeping the factorization needed for gradients and curvature.
pub fn ep_solve<T: Scalar>(
    mu: &DVector<T>,
    sigma: &DMatrix<T>,
    warm_start: Option<&EpSiteState<T>>,
    opts: &EpOptions,
) -> Result<EpSolution<T>> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(CprError::DimensionMismatch(format!("μ has {n} entries, Σ is {}×{}", sigma.nrows(), sigma.ncols())));
    }
    if !(opts.tol > 0.0) || opts.max_sweeps == 0 || !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(CprError::InvalidInput(format!("bad EP options {opts:?}")));
    }
    if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite_value()) {
        return Err(CprError::NonFinite("EP input"));
    }
    if sigma.clone().cholesky().is_none() {
        return Err(CprError::EpFailure("Σ is not positive definite".into()));
    }

    let (mut tau, mut nu, cold) = match warm_start {
        Some(w) if w.len() == n => (w.site_precisions.map(|t| t.max(T::zero())), w.site_shifts.clone(), false),
        Some(w) => {
            return Err(CprError::DimensionMismatch(format!("warm start has {} sites, expected {n}", w.len())));
        }
        None => (DVector::zeros(n), DVector::zeros(n), true),
    };

    let mut global = Global::refresh(mu, sigma, &tau, &nu)?;
    let damping = T::of(opts.damping);
    let tol = T::of(opts.tol);
    let mut sweeps = 0;
    let mut converged = false;

    while sweeps < opts.max_sweeps {
        let step = if cold && sweeps == 0 { T::one() } else { damping };
        let mut max_change = T::zero();
        for i in 0..n {
            let sii = global.cov[(i, i)];
            let tau_cav = T::one() / sii - tau[i];
            if !(tau_cav > T::zero()) {
                continue;
            }
            let nu_cav = global.mean[i] / sii - nu[i];
            let tm = truncnorm_moments_1d(nu_cav / tau_cav, T::one() / tau_cav)?;
            if !(tm.variance > T::zero()) {
                continue;
            }
            let tau_new = (T::one() / tm.variance - tau_cav).max(T::zero());
            let nu_new = tm.mean / tm.variance - nu_cav;
            let tau_next = tau[i] + step * (tau_new - tau[i]);
            let nu_next = nu[i] + step * (nu_new - nu[i]);
            let d_tau = tau_next - tau[i];
            let d_nu = nu_next - nu[i];
            max_change = max_change.max(d_tau.abs()).max(d_nu.abs());
            global.site_update(i, d_tau, d_nu);
            tau[i] = tau_next;
            nu[i] = nu_next;
        }
        sweeps += 1;
        global = Global::refresh(mu, sigma, &tau, &nu)?;
        if !max_change.is_finite_value() {
            return Err(CprError::EpFailure(format!("site update diverged in sweep {sweeps}")));
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }

    let log_mass = global.log_mass(mu, &tau, &nu)?;
    let sites = EpSiteState { site_precisions: tau, site_shifts: nu, converged, iterations: sweeps };
    let Global { mean, cov, sqrt_prec, chol_b, shifted_nat, .. } = global;
    if mean.iter().any(|v| !v.is_finite_value()) {
        return Err(CprError::EpFailure("non-finite posterior mean".into()));
    }
    Ok(EpSolution {
        moments: OrthantMoments { mean, covariance: cov, log_mass },
        sites,
        sqrt_prec,
        chol_b,
        shifted_nat,
    })
}

struct Global<T: Scalar> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    sqrt_prec: DVector<T>,
    chol_b: Cholesky<T, Dyn>,
    shifted_nat: DVector<T>,
}

impl<T: Scalar> Global<T> {
    fn refresh(mu: &DVector<T>, sigma: &DMatrix<T>, tau: &DVector<T>, nu: &DVector<T>) -> Result<Self> {
        let n = mu.len();
        let s = tau.map(|t| t.sqrt());
        let mut b = DMatrix::from_fn(n, n, |i, j| s[i] * sigma[(i, j)] * s[j]);
        for i in 0..n {
            b[(i, i)] += T::one();
        }
        let chol_b = b.cholesky().ok_or_else(|| CprError::EpFailure("I + S½ΣS½ not factorizable".into()))?;
        // V = L⁻¹ S^{½} Σ, Σ_q = Σ − VᵀV
        let mut v = DMatrix::from_fn(n, n, |i, j| s[i] * sigma[(i, j)]);
        chol_b.l().solve_lower_triangular_mut(&mut v);
        let mut cov = sigma.clone();
        cov.gemm_tr(-T::one(), &v, &v, T::one());
        let cov = (&cov + cov.transpose()) * T::of(0.5);
        let shifted_nat = nu - tau.component_mul(mu);
        let mean = mu + &cov * &shifted_nat;
        Ok(Self { mean, cov, sqrt_prec: s, chol_b, shifted_nat })
    }

    /// Applies a change `(Δτ, Δν)` of site `i` as a rank-one update of `q`.
    fn site_update(&mut self, i: usize, d_tau: T, d_nu: T) {
        let col = self.cov.column(i).clone_owned();
        let sii = col[i];
        let k = d_tau / (T::one() + d_tau * sii);
        let coef = d_nu * (T::one() - k * sii) - k * self.mean[i];
        self.mean.axpy(coef, &col, T::one());
        self.cov.ger(-k, &col, &col, T::one());
    }

    fn log_mass(&self, mu: &DVector<T>, tau: &DVector<T>, nu: &DVector<T>) -> Result<T> {
        let n = mu.len();
        let half = T::of(0.5);
        let mut total = T::zero();
        for i in 0..n {
            let sii = self.cov[(i, i)];
            let mi = self.mean[i];
            let tau_cav = T::one() / sii - tau[i];
            let nu_cav = mi / sii - nu[i];
            if !(tau_cav > T::zero()) {
                return Err(CprError::EpFailure(format!("non-positive cavity precision at site {i}")));
            }
            let tm = truncnorm_moments_1d(nu_cav / tau_cav, T::one() / tau_cav)?;
            // log C_i: site normalizer reproducing the tilted mass from the cavity
            total += tm.log_mass - half * (sii * tau_cav).ln() - half * mi * mi / sii
                + half * nu_cav * nu_cav / tau_cav;
        }
        // log ∫ N(ε; μ, Σ) exp(−½ εᵀT̃ε + ν̃ᵀε) dε
        let log_det_b = self.chol_b.l().diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln());
        let quad = self.shifted_nat.dot(&(&self.cov * &self.shifted_nat));
        total += -half * tau.dot(&mu.component_mul(mu)) + nu.dot(mu) - log_det_b + half * quad;
        if !total.is_finite_value() {
            return Err(CprError::EpFailure("non-finite log mass".into()));
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orthant::{orthant_oracle, truncnorm_moments_1d, OracleMethod};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() / (n as f64) + DMatrix::identity(n, n) * 0.3
    }

    fn tight() -> EpOptions {
        EpOptions { tol: 1e-12, max_sweeps: 500, ..EpOptions::default() }
    }

    #[test]
    fn diagonal_covariance_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..8);
            let mu = DVector::from_fn(n, |_, _| rng.random_range(-9.0..4.0));
            let var: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(0.1..3.0));
            let (m, sites) = ep_moments(&mu, &DMatrix::from_diagonal(&var), None, &EpOptions::default()).unwrap();
            assert!(sites.converged);
            let mut log_mass = 0.0;
            for i in 0..n {
                let t = truncnorm_moments_1d(mu[i], var[i]).unwrap();
                log_mass += t.log_mass;
                assert_relative_eq!(m.mean[i], t.mean, epsilon = 1e-10, max_relative = 1e-10);
                assert_relative_eq!(m.covariance[(i, i)], t.variance, epsilon = 1e-10, max_relative = 1e-10);
                for j in 0..n {
                    if i != j {
                        assert!(m.covariance[(i, j)].abs() < 1e-12);
                    }
                }
            }
            assert_relative_eq!(m.log_mass, log_mass, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn symmetric_pair_has_quarter_mass() {
        let (m, _) = ep_moments(&DVector::<f64>::zeros(2), &DMatrix::identity(2, 2), None, &EpOptions::default()).unwrap();
        assert_relative_eq!(m.log_mass, 0.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn correlated_pair_matches_quadrature() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let mu = DVector::zeros(2);
        let (m, sites) = ep_moments(&mu, &sigma, None, &tight()).unwrap();
        assert!(sites.converged);
        let oracle = orthant_oracle(&mu, &sigma, OracleMethod::Quadrature { nodes: 200 }).unwrap().moments;
        assert!((&m.mean - &oracle.mean).amax() < 1e-2);
        assert!((&m.covariance - &oracle.covariance).amax() < 1e-2);
        // EP underestimates log(1/3) by ≈1.8e-3 here; the bias is intrinsic to the site approximation.
        assert!((m.log_mass - oracle.log_mass).abs() < 2.5e-3, "{} vs {}", m.log_mass, oracle.log_mass);
    }

    #[test]
    fn warm_start_from_fixed_point_stops_quickly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [3, 10, 40] {
            let sigma = random_spd(&mut rng, n);
            let mu = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let (first, sites) = ep_moments(&mu, &sigma, None, &EpOptions::default()).unwrap();
            assert!(sites.converged);
            let (again, warm) = ep_moments(&mu, &sigma, Some(&sites), &EpOptions::default()).unwrap();
            assert!(warm.converged && warm.iterations <= 2, "{n}: {} sweeps", warm.iterations);
            assert!((first.log_mass - again.log_mass).abs() < 1e-5);
        }
    }

    #[test]
    fn converged_means_are_positive_and_covariance_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(2..12);
            let sigma = random_spd(&mut rng, n);
            let mu = DVector::from_fn(n, |_, _| rng.random_range(-4.0..3.0));
            let (m, sites) = ep_moments(&mu, &sigma, None, &EpOptions::default()).unwrap();
            assert!(sites.converged);
            assert!(m.mean.iter().all(|&v| v > 0.0), "{:?}", m.mean);
            assert!(m.covariance.clone().symmetric_eigen().eigenvalues.min() > -1e-10);
            assert!(m.log_mass <= 0.0);
            assert!(sites.site_precisions.iter().all(|&t| t >= 0.0));
        }
    }

    #[test]
    fn mass_is_monotone_in_each_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..7);
            let sigma = random_spd(&mut rng, n);
            let mu = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let (base, _) = ep_moments(&mu, &sigma, None, &tight()).unwrap();
            let i = rng.random_range(0..n);
            let mut up = mu.clone();
            up[i] += rng.random_range(0.01..1.0);
            let (raised, _) = ep_moments(&up, &sigma, None, &tight()).unwrap();
            assert!(raised.log_mass >= base.log_mass - 1e-12);
        }
    }

    #[test]
    fn permuting_coordinates_permutes_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        let sigma = random_spd(&mut rng, n);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
        let perm = [3, 0, 5, 1, 4, 2];
        let mu_p = DVector::from_fn(n, |i, _| mu[perm[i]]);
        let sigma_p = DMatrix::from_fn(n, n, |i, j| sigma[(perm[i], perm[j])]);
        let (a, _) = ep_moments(&mu, &sigma, None, &tight()).unwrap();
        let (b, _) = ep_moments(&mu_p, &sigma_p, None, &tight()).unwrap();
        assert_relative_eq!(a.log_mass, b.log_mass, epsilon = 1e-9);
        for i in 0..n {
            assert_relative_eq!(b.mean[i], a.mean[perm[i]], epsilon = 1e-9);
            for j in 0..n {
                assert_relative_eq!(b.covariance[(i, j)], a.covariance[(perm[i], perm[j])], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn site_form_curvature_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 7;
        let sigma = random_spd(&mut rng, n);
        let mu = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let sol = ep_solve(&mu, &sigma, None, &tight()).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        let dense_b = &inv - &inv * &sol.moments.covariance * &inv;
        assert!((sol.curvature() - dense_b).amax() < 1e-8);
        let dense_g = &inv * (&sol.moments.mean - &mu);
        assert!((sol.precision_mean_shift(&sigma) - dense_g).amax() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mu = DVector::zeros(2);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(ep_moments(&mu, &bad, None, &EpOptions::default()), Err(CprError::EpFailure(_))));
        assert!(ep_moments(&mu, &DMatrix::identity(3, 3), None, &EpOptions::default()).is_err());
        let opts = EpOptions { tol: 0.0, ..EpOptions::default() };
        assert!(ep_moments(&mu, &DMatrix::identity(2, 2), None, &opts).is_err());
    }

    #[test]
    fn single_precision_diagonal() {
        let mu = DVector::from_vec(vec![0.0f32, 1.0, -2.0]);
        let (m, _) = ep_moments(&mu, &DMatrix::identity(3, 3), None, &EpOptions::default()).unwrap();
        let expect = truncnorm_moments_1d(-2.0f64, 1.0).unwrap();
        assert_relative_eq!(m.mean[2] as f64, expect.mean, max_relative = 1e-5);
    }
}
