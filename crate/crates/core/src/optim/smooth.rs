//! The smooth part of the training objectives and its derivatives.
//!
//! All inputs are label-absorbed: `x` is `X̃` (`d × n`) and `sigma` is `Σ̃`.
//! With `μ = X̃ᵀw` the correlated objective is `L₀(w) = −log P(N(μ, Σ̃) > 0)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{CprError, Result};
use crate::orthant::{ep_solve, EpOptions, EpSiteState, EpSolution, OrthantMoments};
use crate::scalar::Scalar;
use crate::special::{log_norm_cdf, positive_tail};

fn check_design<T: Scalar>(w: &DVector<T>, x: &DMatrix<T>, n: usize) -> Result<()> {
    if x.nrows() != w.len() {
        return Err(CprError::DimensionMismatch(format!("w has {} entries, X̃ has {} rows", w.len(), x.nrows())));
    }
    if x.ncols() != n {
        return Err(CprError::DimensionMismatch(format!("X̃ has {} columns, expected {n}", x.ncols())));
    }
    Ok(())
}

/// Value of `L₀` together with the EP sites it was computed from.
#[derive(Debug, Clone)]
pub struct Objective<T: Scalar> {
    pub value: T,
    pub sites: EpSiteState<T>,
}

impl<T: Scalar> Objective<T> {
    /// False when EP stopped at its sweep cap.
    pub fn converged(&self) -> bool {
        self.sites.converged
    }
}

/// `L₀(w) = −log mass` of `N(X̃ᵀw, Σ̃)` over the positive orthant, via EP.
pub fn objective_l0<T: Scalar>(
    w: &DVector<T>,
    x: &DMatrix<T>,
    sigma: &DMatrix<T>,
    warm: Option<&EpSiteState<T>>,
    opts: &EpOptions,
) -> Result<Objective<T>> {
    check_design(w, x, sigma.nrows())?;
    let mu = x.tr_mul(w);
    let sol = ep_solve(&mu, sigma, warm, opts)?;
    Ok(Objective { value: -sol.moments.log_mass, sites: sol.sites })
}

/// `−X̃ Σ̃⁻¹ (μ_p − μ)` from moments computed at `μ = X̃ᵀw`.
pub fn gradient_l0<T: Scalar>(
    x: &DMatrix<T>,
    sigma: &DMatrix<T>,
    mu: &DVector<T>,
    moments: &OrthantMoments<T>,
) -> Result<DVector<T>> {
    let chol = sigma.clone().cholesky().ok_or(CprError::IndefiniteCovariance { jitter: 0.0 })?;
    let p = chol.solve(&moments.mean_shift(mu));
    Ok(-(x * p))
}

/// `X̃ (Σ̃⁻¹ − Σ̃⁻¹ Σ_p Σ̃⁻¹) X̃ᵀ` from moments computed at `μ = X̃ᵀw`.
pub fn hessian_l0<T: Scalar>(x: &DMatrix<T>, sigma: &DMatrix<T>, moments: &OrthantMoments<T>) -> Result<DMatrix<T>> {
    let chol = sigma.clone().cholesky().ok_or(CprError::IndefiniteCovariance { jitter: 0.0 })?;
    let inv = chol.inverse();
    let b = &inv - &inv * &moments.covariance * &inv;
    Ok(symmetrize(x * b * x.transpose()))
}

pub(crate) fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::of(0.5)
}

/// Value, gradient in `w`, and `n × n` curvature `B` (so that the Hessian
/// in `w` is `X̃ B X̃ᵀ`) of a smooth loss of `μ = X̃ᵀw`.
#[derive(Debug, Clone)]
pub struct Evaluation<T: Scalar> {
    pub value: T,
    pub gradient: DVector<T>,
    pub curvature: DMatrix<T>,
    pub sites: Option<EpSiteState<T>>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn converged(&self) -> bool {
        self.sites.as_ref().is_none_or(|s| s.converged)
    }
}

/// EP-based value, gradient and curvature of `L₀`, avoiding `Σ̃⁻¹`.
pub fn evaluate_l0<T: Scalar>(
    w: &DVector<T>,
    x: &DMatrix<T>,
    sigma: &DMatrix<T>,
    warm: Option<&EpSiteState<T>>,
    opts: &EpOptions,
) -> Result<Evaluation<T>> {
    check_design(w, x, sigma.nrows())?;
    let mu = x.tr_mul(w);
    let sol: EpSolution<T> = ep_solve(&mu, sigma, warm, opts)?;
    let gradient = -(x * sol.precision_mean_shift(sigma));
    Ok(Evaluation { value: -sol.moments.log_mass, gradient, curvature: sol.curvature(), sites: Some(sol.sites) })
}

/// Per-sample terms `−log Φ(a)` with first and second derivatives in `a`.
fn neg_log_cdf(a: f64) -> (f64, f64, f64) {
    let t = positive_tail(a);
    // d/da −log Φ(a) = −r, d²/da² = r (a + r)
    let second = (t.ratio * (a + t.ratio)).max(0.0);
    (-log_norm_cdf(a), -t.ratio, second)
}

/// `−Σ_i log Φ(μ_i / √v_i)` with `μ = X̃ᵀw`, the objective when `Σ̃ = diag(v)`.
pub fn factorized_objective<T: Scalar>(w: &DVector<T>, x: &DMatrix<T>, variances: &DVector<T>) -> Result<T> {
    Ok(factorized_evaluate(w, x, variances)?.value)
}

/// Closed-form value, gradient and (diagonal) curvature of the factorized objective.
pub fn factorized_evaluate<T: Scalar>(w: &DVector<T>, x: &DMatrix<T>, variances: &DVector<T>) -> Result<Evaluation<T>> {
    check_design(w, x, variances.len())?;
    if variances.iter().any(|v| !(*v > T::zero())) {
        return Err(CprError::InvalidInput("variances must be positive".into()));
    }
    let mu = x.tr_mul(w);
    let n = mu.len();
    let mut value = 0.0;
    let mut dmu = DVector::<T>::zeros(n);
    let mut curv = DVector::<T>::zeros(n);
    for i in 0..n {
        let s = variances[i].to_f64_lossy().sqrt();
        let (v, g, h) = neg_log_cdf(mu[i].to_f64_lossy() / s);
        value += v;
        dmu[i] = T::of(g / s);
        curv[i] = T::of(h / (s * s));
    }
    if !value.is_finite() {
        return Err(CprError::NonFinite("factorized objective"));
    }
    Ok(Evaluation { value: T::of(value), gradient: x * dmu, curvature: DMatrix::from_diagonal(&curv), sites: None })
}

/// Dense `d × d` Hessian of the factorized objective.
pub fn factorized_hessian<T: Scalar>(w: &DVector<T>, x: &DMatrix<T>, variances: &DVector<T>) -> Result<DMatrix<T>> {
    let e = factorized_evaluate(w, x, variances)?;
    Ok(symmetrize(x * e.curvature * x.transpose()))
}

/// Smooth part of the MAP objective,
/// `−Σ_i log Φ(X̃_iᵀ(w + w′)/√λ₁) + ‖w′‖²/(2λ₂)`.
///
/// Returns the value and the gradients in `w` and `w′`. `λ₂ = 0` pins `w′`
/// to zero, so its penalty is zero at `w′ = 0` and infinite elsewhere.
pub fn map_smooth<T: Scalar>(
    w: &DVector<T>,
    w_prime: &DVector<T>,
    x: &DMatrix<T>,
    lambda1: f64,
    lambda2: f64,
) -> Result<(T, DVector<T>, DVector<T>)> {
    if !(lambda1 > 0.0) || !(lambda2 >= 0.0) {
        return Err(CprError::InvalidInput(format!("MAP objective needs λ₁ > 0, λ₂ ≥ 0 (got {lambda1}, {lambda2})")));
    }
    if w.len() != w_prime.len() {
        return Err(CprError::DimensionMismatch("w and w′ lengths differ".into()));
    }
    let v = DVector::from_element(x.ncols(), T::of(lambda1));
    let e = factorized_evaluate(&(w + w_prime), x, &v)?;
    let (penalty, g_prime) = ridge(w_prime, lambda2);
    Ok((e.value + penalty, e.gradient.clone(), e.gradient + g_prime))
}

fn ridge<T: Scalar>(w_prime: &DVector<T>, lambda2: f64) -> (T, DVector<T>) {
    if lambda2 == 0.0 {
        let value = if w_prime.iter().all(|v| *v == T::zero()) { T::zero() } else { T::of(f64::INFINITY) };
        return (value, DVector::zeros(w_prime.len()));
    }
    let inv = T::of(1.0 / lambda2);
    (w_prime.norm_squared() * inv * T::of(0.5), w_prime * inv)
}
