//! Gaussian mass and moments over the positive orthant.

mod ep;
mod oracle;
mod truncnorm;

pub use ep::{ep_moments, ep_solve, EpOptions, EpSiteState, EpSolution, OrthantMoments};
pub use oracle::{gauss_legendre, orthant_oracle, OracleEstimate, OracleMethod, MAX_QUADRATURE_DIM};
pub use truncnorm::{truncnorm_moments_1d, TruncatedMoments};
