//! Prediction from a fitted model, with or without the correlated noise model.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{CprError, Result};
use crate::model::{absorb_signs, build_covariance, Dataset};
use crate::optim::FittedModel;
use crate::orthant::{ep_solve, EpOptions, EpSiteState};
use crate::scalar::Scalar;
use crate::special::log_norm_cdf;

/// Largest test set predicted jointly by enumerating all `2^m` labelings.
pub const MAX_ENUMERATION: usize = 10;

fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// `X_Eᵀw` on standardized features (`w + w′` for the MAP variant).
pub fn linear_scores<T: Scalar>(model: &FittedModel, test_x: &DMatrix<T>) -> Result<Vec<f64>> {
    if test_x.nrows() != model.d() {
        return Err(CprError::DimensionMismatch(format!("test data has {} features, model {}", test_x.nrows(), model.d())));
    }
    let x = model.standardization.apply(test_x)?;
    let s = x.tr_mul(&model.effective_weights::<T>());
    Ok(s.iter().map(|v| v.to_f64_lossy()).collect())
}

/// `sign(X_Eᵀw)` with `sign(0) = +1`.
pub fn predict_independent<T: Scalar>(model: &FittedModel, test_x: &DMatrix<T>) -> Result<Vec<i8>> {
    Ok(linear_scores(model, test_x)?.into_iter().map(sign).collect())
}

/// Test and training samples under one covariance, test block first:
/// `[[K_EE, K_ER], [K_RE, K_RR]]`.
#[derive(Debug, Clone)]
pub struct PredictionJoin<T: Scalar> {
    pub train_x: DMatrix<T>,
    pub test_x: DMatrix<T>,
    pub train_labels: Vec<i8>,
    pub joint_covariance: DMatrix<T>,
}

impl<T: Scalar> PredictionJoin<T> {
    /// Standardizes both sets with the model's parameters and assembles the
    /// joint covariance from the model's kernel weights.
    pub fn new(model: &FittedModel, train: &Dataset<T>, test: &Dataset<T>) -> Result<Self> {
        let std = &model.standardization;
        let train = train.with_x(std.apply(train.x())?)?;
        let test = test.with_x(std.apply(test.x())?)?;
        let joint = test.concat(&train)?;
        let joint_covariance = build_covariance(&model.covariance, &joint)?;
        Ok(Self { train_x: train.x().clone(), test_x: test.x().clone(), train_labels: train.labels().to_vec(), joint_covariance })
    }

    pub fn m(&self) -> usize {
        self.test_x.ncols()
    }

    pub fn n(&self) -> usize {
        self.train_x.ncols()
    }

    fn train_block(&self) -> DMatrix<T> {
        let m = self.m();
        self.joint_covariance.view((m, m), (self.n(), self.n())).clone_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    /// Enumerate when `m ≤ MAX_ENUMERATION`, otherwise per sample.
    Auto,
    /// Joint argmax over all test labelings.
    Exact,
    /// Each test point against the training block, with the training EP
    /// sites held at their converged values.
    PerSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<i8>,
    /// Log-odds style scores, larger meaning more likely `+1`.
    pub scores: Vec<f64>,
    pub mode: PredictionMode,
}

/// Labels minimizing the negative log orthant mass of the joint model.
pub fn predict_correlated<T: Scalar>(
    model: &FittedModel,
    join: &PredictionJoin<T>,
    mode: PredictionMode,
    ep: &EpOptions,
) -> Result<Prediction> {
    let m = join.m();
    if m == 0 {
        return Err(CprError::InvalidInput("no test samples".into()));
    }
    if join.test_x.nrows() != model.d() || join.train_x.nrows() != model.d() {
        return Err(CprError::DimensionMismatch("joined data and model disagree on d".into()));
    }
    let exact = match mode {
        PredictionMode::Auto => m <= MAX_ENUMERATION,
        PredictionMode::Exact if m > MAX_ENUMERATION => {
            return Err(CprError::InvalidInput(format!("exact prediction enumerates at most {MAX_ENUMERATION} test samples")))
        }
        PredictionMode::Exact => true,
        PredictionMode::PerSample => false,
    };
    let w = model.effective_weights::<T>();
    let train_mu = join.train_x.tr_mul(&w);
    let test_mu = join.test_x.tr_mul(&w);
    let (xt, st) = absorb_signs(&join.train_x, &join.train_labels, &join.train_block())?;
    let train_sol = if join.n() > 0 { Some(ep_solve(&xt.tr_mul(&w), &st, None, ep)?) } else { None };
    if exact {
        let warm = train_sol.as_ref().map(|s| &s.sites);
        enumerate(join, &train_mu, &test_mu, warm, ep)
    } else {
        per_sample(join, &test_mu, train_sol.as_ref().map(|s| (s.precision_mean_shift(&st), s.curvature())))
    }
}

fn enumerate<T: Scalar>(
    join: &PredictionJoin<T>,
    train_mu: &DVector<T>,
    test_mu: &DVector<T>,
    train_sites: Option<&EpSiteState<T>>,
    ep: &EpOptions,
) -> Result<Prediction> {
    let (m, n) = (join.m(), join.n());
    let mut mu = DVector::zeros(m + n);
    mu.rows_mut(0, m).copy_from(test_mu);
    mu.rows_mut(m, n).copy_from(train_mu);
    let warm = train_sites.map(|s| {
        let mut tau = DVector::zeros(m + n);
        let mut nu = DVector::zeros(m + n);
        tau.rows_mut(m, n).copy_from(&s.site_precisions);
        nu.rows_mut(m, n).copy_from(&s.site_shifts);
        EpSiteState { site_precisions: tau, site_shifts: nu, converged: false, iterations: 0 }
    });
    let mut signs: Vec<i8> = vec![1; m + n];
    signs[m..].copy_from_slice(&join.train_labels);
    let mut log_mass = Vec::with_capacity(1 << m);
    for code in 0usize..(1 << m) {
        for (j, s) in signs.iter_mut().take(m).enumerate() {
            *s = if code >> j & 1 == 1 { -1 } else { 1 };
        }
        let mut mu_t = mu.clone();
        for (v, &s) in mu_t.iter_mut().zip(&signs) {
            if s < 0 {
                *v = -*v;
            }
        }
        let st = DMatrix::from_fn(m + n, m + n, |i, j| {
            let v = join.joint_covariance[(i, j)];
            if signs[i] == signs[j] {
                v
            } else {
                -v
            }
        });
        let value = match ep_solve(&mu_t, &st, warm.as_ref(), ep) {
            Ok(sol) => sol.moments.log_mass.to_f64_lossy(),
            Err(e) => {
                warn!("candidate labeling {code:#b} scored as impossible: {e}");
                f64::NEG_INFINITY
            }
        };
        log_mass.push(value);
    }
    // The all-positive labeling comes first, so ties resolve to +1.
    let mut best = 0;
    for (c, &v) in log_mass.iter().enumerate() {
        if v > log_mass[best] {
            best = c;
        }
    }
    if log_mass[best] == f64::NEG_INFINITY {
        return Err(CprError::EpFailure("every candidate labeling failed".into()));
    }
    let labels = (0..m).map(|j| if best >> j & 1 == 1 { -1 } else { 1 }).collect();
    let scores = (0..m)
        .map(|j| {
            let (mut pos, mut neg) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (c, &v) in log_mass.iter().enumerate() {
                if c >> j & 1 == 1 {
                    neg = neg.max(v);
                } else {
                    pos = pos.max(v);
                }
            }
            pos - neg
        })
        .collect();
    Ok(Prediction { labels, scores, mode: PredictionMode::Exact })
}

/// `(Σ̃⁻¹Δμ, Σ̃⁻¹ − Σ̃⁻¹Σ_qΣ̃⁻¹)` of the training block.
type TrainPosterior<T> = (DVector<T>, DMatrix<T>);

fn per_sample<T: Scalar>(join: &PredictionJoin<T>, test_mu: &DVector<T>, post: Option<TrainPosterior<T>>) -> Result<Prediction> {
    let (m, n) = (join.m(), join.n());
    let mut labels = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    for e in 0..m {
        let kee = join.joint_covariance[(e, e)].to_f64_lossy();
        let (mean, var) = match &post {
            Some((p, b)) => {
                let k = DVector::from_fn(n, |i, _| {
                    let v = join.joint_covariance[(e, m + i)];
                    if join.train_labels[i] < 0 {
                        -v
                    } else {
                        v
                    }
                });
                let mean = (test_mu[e] + k.dot(p)).to_f64_lossy();
                let var = kee - k.dot(&(b * &k)).to_f64_lossy();
                (mean, var.max(1e-12 * kee))
            }
            None => (test_mu[e].to_f64_lossy(), kee),
        };
        let z = mean / var.sqrt();
        labels.push(sign(mean));
        scores.push(log_norm_cdf(z) - log_norm_cdf(-z));
    }
    Ok(Prediction { labels, scores, mode: PredictionMode::PerSample })
}
