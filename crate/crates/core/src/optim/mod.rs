//! Training: smooth objectives, Newton systems, and the ADMM fits.

mod admm;
mod convexity;
mod fitted;
mod smooth;
mod woodbury;

pub use admm::{fit_cpr, fit_cpr_l2, fit_cpr_map, fit_probit, soft_threshold, AdmmState, FitOptions, MapState};
pub use convexity::{check_convexity, ConvexityReport, Violation};
pub use fitted::{FittedModel, Lambdas, Method, Penalty, FORMAT_VERSION};
pub use smooth::{
    evaluate_l0, factorized_evaluate, factorized_hessian, factorized_objective, gradient_l0, hessian_l0, map_smooth,
    objective_l0, Evaluation, Objective,
};
pub use woodbury::{woodbury_solve, DENSE_FALLBACK_MAX_D};
