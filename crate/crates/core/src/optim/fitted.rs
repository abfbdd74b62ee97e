//! Trained model document.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CprError, Result};
use crate::model::{CovarianceModel, KernelComponent, StandardizationParams};
use crate::scalar::Scalar;

/// Version of the serialized [`FittedModel`] layout.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Correlated probit with the orthant likelihood approximated by EP.
    Cpr,
    /// Factorized likelihood with a MAP estimate of the dense effect `w′`.
    CprMap,
    /// Uncorrelated ℓ1 probit regression.
    Probit,
    /// No fixed effect; prediction uses the correlated noise model alone.
    GpLimit,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cpr, Method::CprMap, Method::Probit, Method::GpLimit];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cpr => "cpr",
            Self::CprMap => "cpr-map",
            Self::Probit => "probit",
            Self::GpLimit => "gp-limit",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = CprError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CprError::InvalidInput(format!("unknown method {s:?}")))
    }
}

/// Regularizer on the sparse weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    #[default]
    L1,
    /// `λ₀‖w‖²/2`, used as a dense reference fit.
    L2,
}

/// `λ₀` (sparsity) and the weights of the identity, linear and side kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Lambdas {
    pub fn of(lambda0: f64, cov: &CovarianceModel) -> Self {
        let mut l = Self { lambda0, lambda1: 0.0, lambda2: 0.0, lambda3: 0.0 };
        for (c, &v) in cov.components.iter().zip(&cov.lambdas) {
            match c {
                KernelComponent::Identity => l.lambda1 += v,
                KernelComponent::Linear => l.lambda2 += v,
                _ => l.lambda3 += v,
            }
        }
        l
    }
}

/// A trained classifier with everything needed to predict and to audit the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format_version: u32,
    pub tool_version: String,
    pub method: Method,
    pub penalty: Penalty,
    /// Sparse weights in standardized feature space.
    pub weights: Vec<f64>,
    /// Dense confounder weights of the MAP variant.
    pub w_prime: Option<Vec<f64>>,
    pub lambdas: Lambdas,
    /// Noise covariance used for training and correlated prediction.
    pub covariance: CovarianceModel,
    pub standardization: StandardizationParams,
    /// Objective after each outer iteration.
    pub objective_trace: Vec<f64>,
    /// Decrease of the Newton subproblem at each accepted step.
    pub step_decreases: Vec<f64>,
    /// Final objective, evaluated at `weights`.
    pub objective: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Final ADMM penalty `c`.
    pub admm_penalty: f64,
    pub seed: Option<u64>,
    pub feature_names: Option<Vec<String>>,
}

impl FittedModel {
    /// A model with zero weights; fits fill in the rest.
    pub fn blank(method: Method, lambda0: f64, covariance: CovarianceModel, standardization: StandardizationParams) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            method,
            penalty: Penalty::L1,
            weights: vec![0.0; standardization.d()],
            w_prime: None,
            lambdas: Lambdas::of(lambda0, &covariance),
            covariance,
            standardization,
            objective_trace: Vec::new(),
            step_decreases: Vec::new(),
            objective: None,
            converged: true,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            admm_penalty: 0.0,
            seed: None,
            feature_names: None,
        }
    }

    /// A model with given weights, e.g. a known generating vector.
    pub fn from_weights(
        method: Method,
        weights: Vec<f64>,
        covariance: CovarianceModel,
        standardization: StandardizationParams,
    ) -> Result<Self> {
        let mut m = Self::blank(method, 0.0, covariance, standardization);
        if weights.len() != m.weights.len() {
            return Err(CprError::DimensionMismatch(format!("{} weights for {} features", weights.len(), m.d())));
        }
        m.weights = weights;
        m.check()?;
        Ok(m)
    }

    pub fn d(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_vector<T: Scalar>(&self) -> DVector<T> {
        DVector::from_iterator(self.weights.len(), self.weights.iter().map(|&v| T::of(v)))
    }

    /// Weights used by the linear score: `w`, or `w + w′` for the MAP variant.
    pub fn effective_weights<T: Scalar>(&self) -> DVector<T> {
        let mut w = self.weight_vector::<T>();
        if let Some(wp) = &self.w_prime {
            for (a, &b) in w.iter_mut().zip(wp) {
                *a += T::of(b);
            }
        }
        w
    }

    pub fn nonzeros(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::from_json(&s)
    }

    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(CprError::InvalidInput(format!("unsupported model format version {}", self.format_version)));
        }
        if self.standardization.d() != self.weights.len() {
            return Err(CprError::DimensionMismatch("standardization and weights disagree on d".into()));
        }
        if self.w_prime.as_ref().is_some_and(|w| w.len() != self.weights.len()) {
            return Err(CprError::DimensionMismatch("w′ length differs from w".into()));
        }
        if self.weights.iter().any(|v| !v.is_finite()) {
            return Err(CprError::NonFinite("model weights"));
        }
        self.covariance.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FittedModel {
        let cov = CovarianceModel::new(
            vec![KernelComponent::Identity, KernelComponent::Linear, KernelComponent::RbfSide { length_scale: 0.2 }],
            vec![1.0, 0.5, 2.0],
        )
        .unwrap();
        let mut m = FittedModel::blank(Method::Cpr, 0.1, cov, StandardizationParams::identity(3));
        m.weights = vec![0.0, 1.5, -0.25];
        m.objective_trace = vec![3.0, 2.0];
        m.with_seed(7)
    }

    #[test]
    fn json_round_trip() {
        let m = sample();
        let s = m.to_json().unwrap();
        assert!(s.contains("\"method\": \"cpr\""));
        assert!(s.contains("\"kind\": \"rbf-side\""));
        let back = FittedModel::from_json(&s).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.lambdas, Lambdas { lambda0: 0.1, lambda1: 1.0, lambda2: 0.5, lambda3: 2.0 });
        assert_eq!(back.seed, Some(7));
        assert_eq!(back.nonzeros(), 2);
    }

    #[test]
    fn rejects_wrong_version_and_shapes() {
        let mut m = sample();
        m.format_version = 99;
        assert!(FittedModel::from_json(&m.to_json().unwrap()).is_err());
        let mut m = sample();
        m.w_prime = Some(vec![1.0]);
        assert!(FittedModel::from_json(&m.to_json().unwrap()).is_err());
    }

    #[test]
    fn effective_weights_add_w_prime() {
        let mut m = sample();
        m.w_prime = Some(vec![1.0, 1.0, 1.0]);
        assert_eq!(m.effective_weights::<f64>().as_slice(), &[1.0, 2.5, 0.75]);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
    }
}
