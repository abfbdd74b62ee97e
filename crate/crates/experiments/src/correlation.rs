//! Repeated subsample fits feeding the confounder-correlation curve.

use cpr_core::metrics::{confounder_correlation_curve, CurveSummary};
use cpr_core::model::Dataset;
use cpr_core::optim::FittedModel;
use cpr_core::{CprError, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStudy {
    pub repetitions: usize,
    /// Share of samples each fit trains on.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for CorrelationStudy {
    fn default() -> Self {
        Self { repetitions: 30, fraction: 0.7, seed: 20 }
    }
}

/// Sorted indices of the subsample used by repetition `r`.
pub fn subsample(n: usize, fraction: f64, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let m = ((n as f64 * fraction).round() as usize).clamp(1, n);
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

/// Fits `fit` on each subsample and summarizes the curves of the sparse
/// weights against the top kernel eigenvector of all of `data`.
pub fn correlation_study<F>(data: &Dataset<f64>, study: &CorrelationStudy, fit: F) -> Result<CurveSummary>
where
    F: Fn(&Dataset<f64>) -> Result<FittedModel> + Sync,
{
    if study.repetitions == 0 || !(study.fraction > 0.0 && study.fraction <= 1.0) {
        return Err(CprError::InvalidInput("need repetitions > 0 and a fraction in (0, 1]".into()));
    }
    let weights = (0..study.repetitions)
        .into_par_iter()
        .map(|r| {
            let sub = data.select(&subsample(data.n(), study.fraction, study.seed, r))?;
            Ok(fit(&sub)?.weights)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    confounder_correlation_curve(&weights, data.x(), study.seed)
}
