//! ADMM with one damped Newton step per iteration for the ℓ1-penalized fits.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fitted::{FittedModel, Method, Penalty};
use super::smooth::{evaluate_l0, factorized_evaluate, Evaluation};
use super::woodbury::woodbury_solve;
use crate::error::{CprError, Result};
use crate::model::{absorb_labels, build_covariance, standardize, CovarianceModel, Dataset, StandardizationParams};
use crate::orthant::EpOptions;
use crate::scalar::Scalar;

const ARMIJO: f64 = 1e-4;

/// `sign(v_i)·max(|v_i| − κ, 0)`
pub fn soft_threshold<T: Scalar>(v: &DVector<T>, kappa: T) -> DVector<T> {
    v.map(|x| {
        let m = x.abs() - kappa;
        if m > T::zero() {
            if x > T::zero() {
                m
            } else {
                -m
            }
        } else {
            T::zero()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub ep: EpOptions,
    /// Initial ADMM penalty `c`.
    pub penalty: f64,
    /// Rescale `c` when one residual dominates the other tenfold.
    pub adapt_penalty: bool,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Iterate Newton to convergence inside every ADMM iteration.
    pub full_newton: bool,
    pub max_backtracks: usize,
    /// Step halvings allowed after EP failures within one line search.
    pub ep_retries: usize,
    /// Standardize features on the training data before fitting.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ep: EpOptions::default(),
            penalty: 1.0,
            adapt_penalty: true,
            abs_tol: 1e-4,
            rel_tol: 1e-3,
            max_iter: 500,
            full_newton: false,
            max_backtracks: 40,
            ep_retries: 8,
            standardize: true,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.penalty > 0.0) || !(self.abs_tol > 0.0) || !(self.rel_tol >= 0.0) || self.max_iter == 0 {
            return Err(CprError::InvalidInput(format!("bad fit options {self:?}")));
        }
        Ok(())
    }
}

/// ADMM iterate: `w` (smooth variable), `z` (sparse copy), `η` (scaled dual).
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState<T: Scalar> {
    pub w: DVector<T>,
    pub z: DVector<T>,
    pub eta: DVector<T>,
    pub c: T,
    /// Step length of the last accepted Newton step.
    pub step_size: T,
    pub iteration: usize,
    pub primal_residual: T,
    pub dual_residual: T,
}

impl<T: Scalar> AdmmState<T> {
    pub fn new(d: usize, c: T) -> Self {
        Self {
            w: DVector::zeros(d),
            z: DVector::zeros(d),
            eta: DVector::zeros(d),
            c,
            step_size: T::one(),
            iteration: 0,
            primal_residual: T::zero(),
            dual_residual: T::zero(),
        }
    }

    /// Boyd's residual test with tolerances `√d·abs + rel·scale`.
    fn converged(&self, abs_tol: f64, rel_tol: f64) -> bool {
        let sd = T::of((self.w.len() as f64).sqrt() * abs_tol);
        let rel = T::of(rel_tol);
        let eps_pri = sd + rel * self.w.norm().max(self.z.norm());
        let eps_dual = sd + rel * self.c * self.eta.norm();
        self.primal_residual <= eps_pri && self.dual_residual <= eps_dual
    }

    /// z- and dual updates after the w-step; records residuals.
    fn update_z_eta(&mut self, lambda0: T, adapt: bool) {
        let z_old = std::mem::replace(&mut self.z, soft_threshold(&(&self.w + &self.eta), lambda0 / self.c));
        self.eta += &self.w - &self.z;
        self.primal_residual = (&self.w - &self.z).norm();
        self.dual_residual = self.c * (&self.z - z_old).norm();
        self.iteration += 1;
        if adapt {
            let ten = T::of(10.0);
            let two = T::of(2.0);
            if self.primal_residual > ten * self.dual_residual {
                self.c *= two;
                self.eta /= two;
            } else if self.dual_residual > ten * self.primal_residual {
                self.c /= two;
                self.eta *= two;
            }
        }
    }
}

/// MAP iterate: ADMM state for the sparse `w` plus the dense `w′`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapState<T: Scalar> {
    pub admm: AdmmState<T>,
    pub w_prime: DVector<T>,
}

/// Smooth loss of `μ = X̃ᵀw`.
pub(crate) enum Loss<'a, T: Scalar> {
    Orthant { sigma: &'a DMatrix<T>, ep: EpOptions },
    Factorized { variances: DVector<T> },
}

impl<T: Scalar> Loss<'_, T> {
    pub(crate) fn evaluate(&self, x: &DMatrix<T>, w: &DVector<T>, warm: Option<&Evaluation<T>>) -> Result<Evaluation<T>> {
        match self {
            Loss::Orthant { sigma, ep } => evaluate_l0(w, x, sigma, warm.and_then(|e| e.sites.as_ref()), ep),
            Loss::Factorized { variances } => factorized_evaluate(w, x, variances),
        }
    }
}

/// Result of one damped Newton step on `f(v + offset) + ½ Σ_i D_i (v_i − a_i)²`.
pub(crate) struct Step<T: Scalar> {
    pub v: DVector<T>,
    pub eval: Evaluation<T>,
    pub alpha: T,
    /// Decrease of the subproblem objective (non-negative when accepted).
    pub decrease: T,
}

pub(crate) struct Newton<'a, T: Scalar> {
    pub loss: Loss<'a, T>,
    pub x: &'a DMatrix<T>,
    pub max_backtracks: usize,
    pub ep_retries: usize,
}

impl<T: Scalar> Newton<'_, T> {
    fn quad(d: &DVector<T>, v: &DVector<T>, anchor: &DVector<T>) -> T {
        let r = v - anchor;
        r.component_mul(&r).dot(d) * T::of(0.5)
    }

    /// `current` must be the loss evaluated at `v + offset`.
    pub(crate) fn step(
        &self,
        v: &DVector<T>,
        offset: Option<&DVector<T>>,
        d: &DVector<T>,
        anchor: &DVector<T>,
        current: &Evaluation<T>,
    ) -> Result<Step<T>> {
        let phi0 = current.value + Self::quad(d, v, anchor);
        let grad = &current.gradient + (v - anchor).component_mul(d);
        let dir = -woodbury_solve(&current.curvature, self.x, d, &grad)?;
        let slope = grad.dot(&dir);
        let unchanged = || Step { v: v.clone(), eval: current.clone(), alpha: T::zero(), decrease: T::zero() };
        if !(slope < T::zero()) {
            return Ok(unchanged());
        }
        let mut alpha = T::one();
        let mut failures = 0;
        let half = T::of(0.5);
        for _ in 0..=self.max_backtracks {
            let trial = v + &dir * alpha;
            let total = offset.map_or_else(|| trial.clone(), |o| &trial + o);
            match self.loss.evaluate(self.x, &total, Some(current)) {
                Ok(eval) => {
                    let phi = eval.value + Self::quad(d, &trial, anchor);
                    if phi <= phi0 + T::of(ARMIJO) * alpha * slope {
                        return Ok(Step { v: trial, eval, alpha, decrease: phi0 - phi });
                    }
                }
                Err(e @ (CprError::EpFailure(_) | CprError::Numerical(_) | CprError::NonFinite(_))) => {
                    failures += 1;
                    warn!("loss evaluation failed at step {alpha}: {e}");
                    if failures > self.ep_retries {
                        return Err(e);
                    }
                }
                Err(e) => return Err(e),
            }
            alpha *= half;
        }
        debug!("line search exhausted; keeping the iterate");
        Ok(unchanged())
    }
}

/// Label-absorbed training problem.
struct Prepared<T: Scalar> {
    xt: DMatrix<T>,
    sigma: DMatrix<T>,
    standardization: StandardizationParams,
}

fn prepare<T: Scalar>(data: &Dataset<T>, cov: &CovarianceModel, opts: &FitOptions) -> Result<Prepared<T>> {
    opts.validate()?;
    let (data, standardization) = if opts.standardize {
        standardize(data)?
    } else {
        (data.clone(), StandardizationParams::identity(data.d()))
    };
    let sigma = build_covariance(cov, &data)?;
    let (xt, sigma) = absorb_labels(&data, &sigma)?;
    Ok(Prepared { xt, sigma, standardization })
}

fn check_lambda0(lambda0: f64) -> Result<()> {
    if !(lambda0 >= 0.0) || !lambda0.is_finite() {
        return Err(CprError::InvalidInput(format!("λ₀ = {lambda0} must be finite and non-negative")));
    }
    Ok(())
}

fn l1<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |a, x| a + x.abs())
}

/// Runs ADMM on `loss(w) + λ₀‖z‖₁` subject to `w = z`.
fn run_admm<T: Scalar>(newton: &Newton<'_, T>, lambda0: f64, opts: &FitOptions, model: &mut FittedModel) -> Result<AdmmState<T>> {
    let d = newton.x.nrows();
    let lam = T::of(lambda0);
    let mut st = AdmmState::new(d, T::of(opts.penalty));
    let mut eval = newton.loss.evaluate(newton.x, &st.w, None)?;
    let mut converged = false;
    while st.iteration < opts.max_iter {
        let anchor = &st.z - &st.eta;
        let dvec = DVector::from_element(d, st.c);
        let inner = if opts.full_newton { 50 } else { 1 };
        for _ in 0..inner {
            let step = newton.step(&st.w, None, &dvec, &anchor, &eval)?;
            model.step_decreases.push(step.decrease.to_f64_lossy());
            let done = step.alpha == T::zero() || step.decrease < T::of(1e-12);
            st.w = step.v;
            st.step_size = step.alpha;
            eval = step.eval;
            if done {
                break;
            }
        }
        st.update_z_eta(lam, opts.adapt_penalty);
        model.objective_trace.push((eval.value + lam * l1(&st.z)).to_f64_lossy());
        if st.converged(opts.abs_tol, opts.rel_tol) {
            converged = true;
            break;
        }
    }
    model.converged = converged && eval.converged();
    if !converged {
        warn!("ADMM stopped after {} iterations without meeting the residual test", st.iteration);
    }
    let at_z = newton.loss.evaluate(newton.x, &st.z, Some(&eval))?;
    model.objective = Some((at_z.value + lam * l1(&st.z)).to_f64_lossy());
    Ok(st)
}

fn finish<T: Scalar>(model: &mut FittedModel, st: &AdmmState<T>, data: &Dataset<T>) {
    model.weights = st.z.iter().map(|v| v.to_f64_lossy()).collect();
    model.iterations = st.iteration;
    model.primal_residual = st.primal_residual.to_f64_lossy();
    model.dual_residual = st.dual_residual.to_f64_lossy();
    model.admm_penalty = st.c.to_f64_lossy();
    model.feature_names = data.names().map(<[String]>::to_vec);
}

/// ℓ1-penalized correlated probit regression with the orthant likelihood
/// evaluated by EP. Weights are reported from the sparse ADMM copy `z`.
pub fn fit_cpr<T: Scalar>(data: &Dataset<T>, cov: &CovarianceModel, lambda0: f64, opts: &FitOptions) -> Result<FittedModel> {
    check_lambda0(lambda0)?;
    let p = prepare(data, cov, opts)?;
    let mut model = FittedModel::blank(Method::Cpr, lambda0, cov.clone(), p.standardization.clone());
    let newton = Newton {
        loss: Loss::Orthant { sigma: &p.sigma, ep: opts.ep },
        x: &p.xt,
        max_backtracks: opts.max_backtracks,
        ep_retries: opts.ep_retries,
    };
    let st = run_admm(&newton, lambda0, opts, &mut model)?;
    finish(&mut model, &st, data);
    Ok(model)
}

/// Uncorrelated ℓ1 probit regression, `Σ = λ₁I`, using the closed-form likelihood.
pub fn fit_probit<T: Scalar>(data: &Dataset<T>, lambda1: f64, lambda0: f64, opts: &FitOptions) -> Result<FittedModel> {
    check_lambda0(lambda0)?;
    let cov = CovarianceModel::identity_linear(lambda1, 0.0);
    cov.validate()?;
    let p = prepare(data, &cov, opts)?;
    let mut model = FittedModel::blank(Method::Probit, lambda0, cov, p.standardization.clone());
    let newton = Newton {
        loss: Loss::Factorized { variances: p.sigma.diagonal() },
        x: &p.xt,
        max_backtracks: opts.max_backtracks,
        ep_retries: opts.ep_retries,
    };
    let st = run_admm(&newton, lambda0, opts, &mut model)?;
    finish(&mut model, &st, data);
    Ok(model)
}

/// Dense reference fit: `L₀(w) + λ₀‖w‖²/2` minimized by damped Newton.
pub fn fit_cpr_l2<T: Scalar>(data: &Dataset<T>, cov: &CovarianceModel, lambda0: f64, opts: &FitOptions) -> Result<FittedModel> {
    check_lambda0(lambda0)?;
    if lambda0 == 0.0 {
        return Err(CprError::InvalidInput("ridge fit needs λ₀ > 0".into()));
    }
    let p = prepare(data, cov, opts)?;
    let d = p.xt.nrows();
    let mut model = FittedModel::blank(Method::Cpr, lambda0, cov.clone(), p.standardization.clone());
    model.penalty = Penalty::L2;
    let newton = Newton {
        loss: Loss::Orthant { sigma: &p.sigma, ep: opts.ep },
        x: &p.xt,
        max_backtracks: opts.max_backtracks,
        ep_retries: opts.ep_retries,
    };
    let dvec = DVector::from_element(d, T::of(lambda0));
    let zero = DVector::zeros(d);
    let mut w = DVector::zeros(d);
    let mut eval = newton.loss.evaluate(&p.xt, &w, None)?;
    let ridge = |w: &DVector<T>| w.norm_squared() * T::of(0.5 * lambda0);
    model.converged = false;
    for it in 0..opts.max_iter {
        let step = newton.step(&w, None, &dvec, &zero, &eval)?;
        let moved = (&step.v - &w).amax();
        model.step_decreases.push(step.decrease.to_f64_lossy());
        w = step.v;
        eval = step.eval;
        model.objective_trace.push((eval.value + ridge(&w)).to_f64_lossy());
        model.iterations = it + 1;
        if step.alpha == T::zero() || moved <= T::of(opts.abs_tol) {
            model.converged = eval.converged();
            break;
        }
    }
    model.objective = Some((eval.value + ridge(&w)).to_f64_lossy());
    model.weights = w.iter().map(|v| v.to_f64_lossy()).collect();
    model.feature_names = data.names().map(<[String]>::to_vec);
    Ok(model)
}

/// MAP variant: minimizes
/// `−Σ_i log Φ(X̃_iᵀ(w + w′)/√λ₁) + ‖w′‖²/(2λ₂) + λ₀‖w‖₁`
/// by alternating a Newton step in `w′` with an ADMM-wrapped Newton step in `w`.
pub fn fit_cpr_map<T: Scalar>(
    data: &Dataset<T>,
    lambda1: f64,
    lambda2: f64,
    lambda0: f64,
    opts: &FitOptions,
) -> Result<FittedModel> {
    check_lambda0(lambda0)?;
    if !(lambda2 >= 0.0) || !lambda2.is_finite() {
        return Err(CprError::InvalidInput(format!("λ₂ = {lambda2} must be finite and non-negative")));
    }
    let cov = CovarianceModel::identity_linear(lambda1, 0.0);
    cov.validate()?;
    let p = prepare(data, &cov, opts)?;
    let d = p.xt.nrows();
    let mut model = FittedModel::blank(Method::CprMap, lambda0, CovarianceModel::identity_linear(lambda1, lambda2), p.standardization.clone());
    let newton = Newton {
        loss: Loss::Factorized { variances: DVector::from_element(p.xt.ncols(), T::of(lambda1)) },
        x: &p.xt,
        max_backtracks: opts.max_backtracks,
        ep_retries: opts.ep_retries,
    };
    let lam = T::of(lambda0);
    let ridge_d = (lambda2 > 0.0).then(|| DVector::from_element(d, T::of(1.0 / lambda2)));
    let ridge = |wp: &DVector<T>| ridge_d.as_ref().map_or(T::zero(), |r| wp.norm_squared() * r[0] * T::of(0.5));
    let zero = DVector::zeros(d);
    let mut st = MapState { admm: AdmmState::new(d, T::of(opts.penalty)), w_prime: DVector::zeros(d) };
    let mut eval = newton.loss.evaluate(&p.xt, &zero, None)?;
    let mut converged = false;
    while st.admm.iteration < opts.max_iter {
        let mut wp_move = T::zero();
        if let Some(rd) = &ridge_d {
            let step = newton.step(&st.w_prime, Some(&st.admm.w), rd, &zero, &eval)?;
            model.step_decreases.push(step.decrease.to_f64_lossy());
            wp_move = (&step.v - &st.w_prime).norm();
            st.w_prime = step.v;
            eval = step.eval;
        }
        let anchor = &st.admm.z - &st.admm.eta;
        let dvec = DVector::from_element(d, st.admm.c);
        let step = newton.step(&st.admm.w, Some(&st.w_prime), &dvec, &anchor, &eval)?;
        model.step_decreases.push(step.decrease.to_f64_lossy());
        st.admm.w = step.v;
        st.admm.step_size = step.alpha;
        eval = step.eval;
        st.admm.update_z_eta(lam, opts.adapt_penalty);
        model.objective_trace.push((eval.value + ridge(&st.w_prime) + lam * l1(&st.admm.z)).to_f64_lossy());
        let sd = T::of((d as f64).sqrt() * opts.abs_tol) + T::of(opts.rel_tol) * st.w_prime.norm();
        if st.admm.converged(opts.abs_tol, opts.rel_tol) && wp_move <= sd {
            converged = true;
            break;
        }
    }
    model.converged = converged;
    let at_z = newton.loss.evaluate(&p.xt, &(&st.admm.z + &st.w_prime), None)?;
    model.objective = Some((at_z.value + ridge(&st.w_prime) + lam * l1(&st.admm.z)).to_f64_lossy());
    finish(&mut model, &st.admm, data);
    model.w_prime = Some(st.w_prime.iter().map(|v| v.to_f64_lossy()).collect());
    Ok(model)
}
