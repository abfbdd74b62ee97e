//! Sparse probit regression with correlated noise.
//!
//! Labels follow `y = sign(Xᵀw + ε)` with `ε ~ N(0, Σ)`, where `Σ` mixes an
//! identity term with similarity kernels that model confounding between
//! samples. The negative log marginal likelihood is the negative log mass of
//! a Gaussian over the positive orthant; it is approximated with expectation
//! propagation and minimized under an ℓ1 penalty with ADMM.

pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod orthant;
pub mod predict;
pub mod scalar;
pub mod special;

pub use error::{CprError, Result};
pub use scalar::Scalar;

pub type Dataset64 = model::Dataset<f64>;
pub type Dataset32 = model::Dataset<f32>;
pub type SampleKernel64 = model::SampleKernel<f64>;
pub type SampleKernel32 = model::SampleKernel<f32>;
pub type OrthantMoments64 = orthant::OrthantMoments<f64>;
pub type OrthantMoments32 = orthant::OrthantMoments<f32>;
pub type EpSiteState64 = orthant::EpSiteState<f64>;
pub type EpSiteState32 = orthant::EpSiteState<f32>;
pub type AdmmState64 = optim::AdmmState<f64>;
pub type AdmmState32 = optim::AdmmState<f32>;
pub type PredictionJoin64 = predict::PredictionJoin<f64>;
pub type PredictionJoin32 = predict::PredictionJoin<f32>;
