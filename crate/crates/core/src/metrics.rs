//! Classification metrics and the confounder-correlation diagnostic.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CprError, Result};
use crate::scalar::Scalar;

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CprError::DimensionMismatch(format!("{a} scores for {b} labels")));
    }
    Ok(())
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(pred: &[i8], labels: &[i8]) -> Result<f64> {
    check_pair(pred.len(), labels.len())?;
    if pred.is_empty() {
        return Err(CprError::Undefined("accuracy of an empty set".into()));
    }
    Ok(pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / pred.len() as f64)
}

fn class_counts(labels: &[i8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l > 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CprError::Undefined("AUC needs both classes".into()));
    }
    Ok((pos, neg))
}

/// Rank-based area under the ROC curve; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[i8]) -> Result<f64> {
    check_pair(scores.len(), labels.len())?;
    let (pos, neg) = class_counts(labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CprError::NonFinite("scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann–Whitney with mid-ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] > 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// ROC vertices `(fpr, tpr)` with tied scores merged into one segment.
pub fn roc_curve(scores: &[f64], labels: &[i8]) -> Result<Vec<(f64, f64)>> {
    check_pair(scores.len(), labels.len())?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] > 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Area under the ROC curve for false-positive rates in `[0, upper_fpr]`
/// (trapezoid rule), divided by `upper_fpr`.
pub fn auc_partial(scores: &[f64], labels: &[i8], upper_fpr: f64) -> Result<f64> {
    if !(upper_fpr > 0.0 && upper_fpr <= 1.0) {
        return Err(CprError::InvalidInput(format!("upper FPR {upper_fpr} outside (0, 1]")));
    }
    let pts = roc_curve(scores, labels)?;
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= upper_fpr {
            break;
        }
        if x1 <= upper_fpr {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (upper_fpr - x0) / (x1 - x0);
            area += (upper_fpr - x0) * (y0 + y) / 2.0;
        }
    }
    Ok(area / upper_fpr)
}

/// Top eigenvector of the linear kernel `XᵀX` (an `n`-vector) by power
/// iteration from a seeded random start, sign fixed so the largest entry is positive.
pub fn top_kernel_eigenvector<T: Scalar>(x: &DMatrix<T>, seed: u64, tol: f64) -> Result<DVector<f64>> {
    let n = x.ncols();
    if n == 0 {
        return Err(CprError::InvalidInput("no samples".into()));
    }
    let xf = x.map(|v| v.to_f64_lossy());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    v /= v.norm();
    for _ in 0..10_000 {
        // XᵀX v without forming the kernel.
        let mut next = xf.tr_mul(&(&xf * &v));
        let norm = next.norm();
        if norm == 0.0 {
            return Err(CprError::Undefined("linear kernel is zero".into()));
        }
        next /= norm;
        if next.dot(&v) < 0.0 {
            next = -next;
        }
        let change = (&next - &v).amax();
        v = next;
        if change < tol {
            break;
        }
    }
    if v.iter().copied().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a }) < 0.0 {
        v = -v;
    }
    Ok(v)
}

/// Pearson correlation of every feature row with `score`; zero-variance rows give 0.
pub fn feature_correlations<T: Scalar>(x: &DMatrix<T>, score: &DVector<f64>) -> Result<Vec<f64>> {
    let n = x.ncols();
    if score.len() != n {
        return Err(CprError::DimensionMismatch(format!("score has {} entries for {n} samples", score.len())));
    }
    let sm = score.mean();
    let sc = score.map(|v| v - sm);
    let sn = sc.norm();
    Ok(x.row_iter()
        .map(|row| {
            let vals: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
            let m = vals.iter().sum::<f64>() / n as f64;
            let (mut dot, mut ss) = (0.0, 0.0);
            for (v, s) in vals.iter().zip(sc.iter()) {
                dot += (v - m) * s;
                ss += (v - m) * (v - m);
            }
            let denom = ss.sqrt() * sn;
            if denom > 1e-300 {
                dot / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// Running means `ĉ_i = (1/i) Σ_{k≤i} |c_(k)|` with features ordered by
/// descending `|w|` (stable, so ties keep feature order).
pub fn correlation_curve(weights: &[f64], correlations: &[f64]) -> Result<Vec<f64>> {
    check_pair(weights.len(), correlations.len())?;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()));
    let mut acc = 0.0;
    Ok(order
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            acc += correlations[k].abs();
            acc / (i + 1) as f64
        })
        .collect())
}

/// Mean and standard error of a set of curves, point by point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSummary {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

impl CurveSummary {
    pub fn of(curves: &[Vec<f64>]) -> Result<Self> {
        let first = curves.first().ok_or_else(|| CprError::InvalidInput("no curves".into()))?;
        if curves.iter().any(|c| c.len() != first.len()) {
            return Err(CprError::DimensionMismatch("curves differ in length".into()));
        }
        let r = curves.len() as f64;
        let mut mean = vec![0.0; first.len()];
        let mut std_error = vec![0.0; first.len()];
        for i in 0..first.len() {
            let m = curves.iter().map(|c| c[i]).sum::<f64>() / r;
            mean[i] = m;
            if curves.len() > 1 {
                let var = curves.iter().map(|c| (c[i] - m).powi(2)).sum::<f64>() / (r - 1.0);
                std_error[i] = (var / r).sqrt();
            }
        }
        Ok(Self { mean, std_error })
    }

    /// CSV with columns `index,mean,std_error` (1-based index).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "mean", "std_error"]).map_err(csv_err)?;
        for (i, (m, s)) in self.mean.iter().zip(&self.std_error).enumerate() {
            out.write_record([(i + 1).to_string(), m.to_string(), s.to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> CprError {
    CprError::Io(std::io::Error::other(e))
}

/// Confounder-correlation curves for several fits: features are correlated
/// with the top eigenvector of the linear kernel on `x` (all samples), then
/// each weight vector yields a running-mean curve; the curves are summarized.
pub fn confounder_correlation_curve<T: Scalar>(weight_sets: &[Vec<f64>], x: &DMatrix<T>, seed: u64) -> Result<CurveSummary> {
    if weight_sets.is_empty() {
        return Err(CprError::InvalidInput("at least one fit is required".into()));
    }
    let pc = top_kernel_eigenvector(x, seed, 1e-9)?;
    let corr = feature_correlations(x, &pc)?;
    let curves = weight_sets.iter().map(|w| correlation_curve(w, &corr)).collect::<Result<Vec<_>>>()?;
    CurveSummary::of(&curves)
}
