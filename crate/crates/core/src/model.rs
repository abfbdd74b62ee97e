//! Problem setup: datasets, noise kernels, covariance assembly, label
//! absorption and feature standardization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CprError, Result};
use crate::scalar::Scalar;

/// Default relative jitter: `1e-8 · trace(Σ)/n` is added to the diagonal.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Length scale used for a scalar, age-like side feature.
pub const DEFAULT_RBF_LENGTH_SCALE: f64 = 0.2;

/// A precomputed sample-by-sample kernel together with the rows of it that
/// the samples of a dataset correspond to.
#[derive(Debug, Clone)]
pub struct SampleKernel<T: Scalar> {
    full: Arc<DMatrix<T>>,
    index: Vec<usize>,
}

impl<T: Scalar> SampleKernel<T> {
    pub fn new(full: DMatrix<T>) -> Result<Self> {
        if !full.is_square() {
            return Err(CprError::DimensionMismatch("precomputed kernel must be square".into()));
        }
        if full.iter().any(|v| !v.is_finite_value()) {
            return Err(CprError::NonFinite("precomputed kernel"));
        }
        let index = (0..full.nrows()).collect();
        Ok(Self { full: Arc::new(full), index })
    }

    pub fn index(&self) -> &[usize] {
        &self.index
    }

    pub fn full(&self) -> &DMatrix<T> {
        &self.full
    }

    fn select(&self, samples: &[usize]) -> Self {
        Self { full: Arc::clone(&self.full), index: samples.iter().map(|&s| self.index[s]).collect() }
    }

    fn concat(&self, other: &Self) -> Result<Self> {
        if !Arc::ptr_eq(&self.full, &other.full) && self.full != other.full {
            return Err(CprError::InvalidInput("datasets refer to different precomputed kernels".into()));
        }
        let mut index = self.index.clone();
        index.extend_from_slice(&other.index);
        Ok(Self { full: Arc::clone(&self.full), index })
    }

    /// The kernel restricted to this dataset's samples.
    pub fn matrix(&self) -> DMatrix<T> {
        let n = self.index.len();
        DMatrix::from_fn(n, n, |i, j| self.full[(self.index[i], self.index[j])])
    }
}

/// Design matrix (features × samples) with ±1 labels and optional extras.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    x: DMatrix<T>,
    labels: Vec<i8>,
    side: Option<DMatrix<T>>,
    names: Option<Vec<String>>,
    groups: Option<Vec<usize>>,
    sample_kernel: Option<SampleKernel<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset from a `d × n` design matrix and `n` labels in {+1, -1}.
    pub fn new(x: DMatrix<T>, labels: Vec<i8>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite_value()) {
            return Err(CprError::NonFinite("design matrix"));
        }
        if x.ncols() != labels.len() {
            return Err(CprError::DimensionMismatch(format!(
                "{} samples in X but {} labels",
                x.ncols(),
                labels.len()
            )));
        }
        check_labels(&labels)?;
        Ok(Self { x, labels, side: None, names: None, groups: None, sample_kernel: None })
    }

    /// Converts real-valued labels, accepting {+1, -1} or {1, 0}.
    pub fn from_real_labels(x: DMatrix<T>, labels: &[f64]) -> Result<Self> {
        let labels = labels
            .iter()
            .enumerate()
            .map(|(index, &value)| match value {
                v if v == 1.0 => Ok(1),
                v if v == -1.0 || v == 0.0 => Ok(-1),
                value => Err(CprError::InvalidLabel { index, value }),
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::new(x, labels)
    }

    pub fn with_side(mut self, side: DMatrix<T>) -> Result<Self> {
        if side.ncols() != self.n() {
            return Err(CprError::DimensionMismatch(format!(
                "side information has {} samples, expected {}",
                side.ncols(),
                self.n()
            )));
        }
        if side.iter().any(|v| !v.is_finite_value()) {
            return Err(CprError::NonFinite("side information"));
        }
        self.side = Some(side);
        Ok(self)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d() {
            return Err(CprError::DimensionMismatch(format!("{} names for {} features", names.len(), self.d())));
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.n() {
            return Err(CprError::DimensionMismatch(format!("{} groups for {} samples", groups.len(), self.n())));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn with_sample_kernel(mut self, kernel: SampleKernel<T>) -> Result<Self> {
        if kernel.index.len() != self.n() {
            return Err(CprError::DimensionMismatch(format!(
                "precomputed kernel covers {} samples, expected {}",
                kernel.index.len(),
                self.n()
            )));
        }
        self.sample_kernel = Some(kernel);
        Ok(self)
    }

    /// Number of features.
    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn side(&self) -> Option<&DMatrix<T>> {
        self.side.as_ref()
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn sample_kernel(&self) -> Option<&SampleKernel<T>> {
        self.sample_kernel.as_ref()
    }

    /// Replaces the design matrix, keeping labels and auxiliary data.
    pub fn with_x(&self, x: DMatrix<T>) -> Result<Self> {
        if x.ncols() != self.n() {
            return Err(CprError::DimensionMismatch("replacement X changes sample count".into()));
        }
        if x.iter().any(|v| !v.is_finite_value()) {
            return Err(CprError::NonFinite("design matrix"));
        }
        Ok(Self { x, ..self.clone() })
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(CprError::InvalidInput(format!("sample index {bad} out of range {}", self.n())));
        }
        let x = self.x.select_columns(indices);
        Ok(Self {
            x,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            side: self.side.as_ref().map(|s| s.select_columns(indices)),
            names: self.names.clone(),
            groups: self.groups.as_ref().map(|g| indices.iter().map(|&i| g[i]).collect()),
            sample_kernel: self.sample_kernel.as_ref().map(|k| k.select(indices)),
        })
    }

    /// Samples of `self` followed by the samples of `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.d() != other.d() {
            return Err(CprError::DimensionMismatch(format!("{} vs {} features", self.d(), other.d())));
        }
        let n = self.n() + other.n();
        let mut x = DMatrix::zeros(self.d(), n);
        x.columns_mut(0, self.n()).copy_from(&self.x);
        x.columns_mut(self.n(), other.n()).copy_from(&other.x);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let side = match (&self.side, &other.side) {
            (Some(a), Some(b)) if a.nrows() == b.nrows() => {
                let mut s = DMatrix::zeros(a.nrows(), n);
                s.columns_mut(0, a.ncols()).copy_from(a);
                s.columns_mut(a.ncols(), b.ncols()).copy_from(b);
                Some(s)
            }
            (None, None) => None,
            _ => return Err(CprError::DimensionMismatch("side information present on one side only".into())),
        };
        let groups = match (&self.groups, &other.groups) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let sample_kernel = match (&self.sample_kernel, &other.sample_kernel) {
            (Some(a), Some(b)) => Some(a.concat(b)?),
            (None, None) => None,
            _ => return Err(CprError::InvalidInput("precomputed kernel present on one side only".into())),
        };
        Ok(Self { x, labels, side, names: self.names.clone(), groups, sample_kernel })
    }

    /// Labels as reals.
    pub fn label_vector(&self) -> DVector<T> {
        DVector::from_iterator(self.n(), self.labels.iter().map(|&l| T::of(l as f64)))
    }
}

fn check_labels(labels: &[i8]) -> Result<()> {
    match labels.iter().position(|&l| l != 1 && l != -1) {
        Some(index) => Err(CprError::InvalidLabel { index, value: labels[index] as f64 }),
        None => Ok(()),
    }
}

/// One additive term of the noise covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelComponent {
    Identity,
    /// `XᵀX` on the (standardized) design matrix.
    Linear,
    /// RBF kernel on the side-information features.
    RbfSide { length_scale: f64 },
    /// A sample kernel supplied with the dataset.
    Precomputed,
}

impl KernelComponent {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Linear => "linear",
            Self::RbfSide { .. } => "rbf-side",
            Self::Precomputed => "precomputed",
        }
    }

    pub fn matrix<T: Scalar>(&self, data: &Dataset<T>) -> Result<DMatrix<T>> {
        match *self {
            Self::Identity => Ok(DMatrix::identity(data.n(), data.n())),
            Self::Linear => linear_kernel(data.x()),
            Self::RbfSide { length_scale } => {
                let side = data
                    .side()
                    .ok_or_else(|| CprError::InvalidInput("rbf-side kernel requires side information".into()))?;
                rbf_kernel(side, T::of(length_scale))
            }
            Self::Precomputed => data
                .sample_kernel()
                .map(SampleKernel::matrix)
                .ok_or_else(|| CprError::InvalidInput("precomputed kernel missing from dataset".into())),
        }
    }
}

/// `Σ = Σ_i λ_i K_i + jitter·I`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub components: Vec<KernelComponent>,
    pub lambdas: Vec<f64>,
    /// Relative jitter, scaled by `trace(Σ)/n`.
    pub jitter: f64,
}

impl CovarianceModel {
    pub fn new(components: Vec<KernelComponent>, lambdas: Vec<f64>) -> Result<Self> {
        let model = Self { components, lambdas, jitter: DEFAULT_JITTER };
        model.validate()?;
        Ok(model)
    }

    /// `λ₁ I + λ₂ XᵀX`
    pub fn identity_linear(lambda1: f64, lambda2: f64) -> Self {
        Self {
            components: vec![KernelComponent::Identity, KernelComponent::Linear],
            lambdas: vec![lambda1, lambda2],
            jitter: DEFAULT_JITTER,
        }
    }

    /// Weight of the identity component, if there is one.
    pub fn identity_weight(&self) -> Option<f64> {
        self.weight_of(|c| matches!(c, KernelComponent::Identity))
    }

    pub fn linear_weight(&self) -> f64 {
        self.weight_of(|c| matches!(c, KernelComponent::Linear)).unwrap_or(0.0)
    }

    fn weight_of(&self, pred: impl Fn(&KernelComponent) -> bool) -> Option<f64> {
        let mut found = None;
        for (c, &l) in self.components.iter().zip(&self.lambdas) {
            if pred(c) {
                *found.get_or_insert(0.0) += l;
            }
        }
        found
    }

    /// True when only the identity term carries weight.
    pub fn is_diagonal(&self) -> bool {
        self.components
            .iter()
            .zip(&self.lambdas)
            .all(|(c, &l)| matches!(c, KernelComponent::Identity) || l == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.len() != self.lambdas.len() {
            return Err(CprError::DimensionMismatch(format!(
                "{} kernel components but {} weights",
                self.components.len(),
                self.lambdas.len()
            )));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(CprError::InvalidInput(format!("kernel weight {l} must be finite and non-negative")));
        }
        match self.identity_weight() {
            Some(l) if l > 0.0 => {}
            _ => return Err(CprError::InvalidInput("identity kernel weight must be strictly positive".into())),
        }
        for c in &self.components {
            if let KernelComponent::RbfSide { length_scale } = c {
                if !(*length_scale > 0.0 && length_scale.is_finite()) {
                    return Err(CprError::InvalidInput(format!("rbf length scale {length_scale} must be positive")));
                }
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(CprError::InvalidInput("jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// `XᵀX` for a `d × n` matrix.
pub fn linear_kernel<T: Scalar>(x: &DMatrix<T>) -> Result<DMatrix<T>> {
    if x.iter().any(|v| !v.is_finite_value()) {
        return Err(CprError::NonFinite("linear kernel input"));
    }
    Ok(x.tr_mul(x))
}

/// `exp(-½ ‖x_i − x_j‖² / σ²)` over the columns of `side`.
pub fn rbf_kernel<T: Scalar>(side: &DMatrix<T>, length_scale: T) -> Result<DMatrix<T>> {
    if !(length_scale > T::zero()) || !length_scale.is_finite_value() {
        return Err(CprError::InvalidInput(format!("rbf length scale {length_scale} must be positive")));
    }
    if side.iter().any(|v| !v.is_finite_value()) {
        return Err(CprError::NonFinite("rbf kernel input"));
    }
    let n = side.ncols();
    let scale = T::of(-0.5) / (length_scale * length_scale);
    let mut k = DMatrix::identity(n, n);
    for j in 0..n {
        for i in 0..j {
            let dist2 = side.column(i).iter().zip(side.column(j).iter()).fold(T::zero(), |acc, (&a, &b)| {
                let diff = a - b;
                acc + diff * diff
            });
            let v = (scale * dist2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Assembles `Σ = Σ_i λ_i K_i + jitter·(trace/n)·I` and checks that it factorizes.
pub fn build_covariance<T: Scalar>(model: &CovarianceModel, data: &Dataset<T>) -> Result<DMatrix<T>> {
    model.validate()?;
    let n = data.n();
    let mut sigma = DMatrix::<T>::zeros(n, n);
    for (component, &lambda) in model.components.iter().zip(&model.lambdas) {
        if lambda == 0.0 {
            continue;
        }
        match component {
            KernelComponent::Identity => {
                for i in 0..n {
                    sigma[(i, i)] += T::of(lambda);
                }
            }
            _ => sigma += component.matrix(data)? * T::of(lambda),
        }
    }
    if n > 0 {
        let jitter = T::of(model.jitter) * sigma.trace() / T::of(n as f64);
        for i in 0..n {
            sigma[(i, i)] += jitter;
        }
    }
    // Symmetrize round-off from the kernel products.
    let sigma = (&sigma + sigma.transpose()) * T::of(0.5);
    if sigma.clone().cholesky().is_none() {
        return Err(CprError::IndefiniteCovariance { jitter: model.jitter });
    }
    Ok(sigma)
}

/// Absorbs label signs: column `i` of `X` is multiplied by `y_i` and
/// `Σ_ij` by `y_i y_j`. Afterwards every label is effectively `+1`.
pub fn absorb_labels<T: Scalar>(data: &Dataset<T>, sigma: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    absorb_signs(data.x(), data.labels(), sigma)
}

/// [`absorb_labels`] on raw parts.
pub fn absorb_signs<T: Scalar>(x: &DMatrix<T>, labels: &[i8], sigma: &DMatrix<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    check_labels(labels)?;
    let n = labels.len();
    if x.ncols() != n || sigma.nrows() != n || sigma.ncols() != n {
        return Err(CprError::DimensionMismatch(format!(
            "labels {n}, X columns {}, Σ {}×{}",
            x.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let sign = |i: usize| if labels[i] < 0 { -T::one() } else { T::one() };
    let mut xt = x.clone();
    for (i, mut col) in xt.column_iter_mut().enumerate() {
        if labels[i] < 0 {
            col.neg_mut();
        }
    }
    let st = DMatrix::from_fn(n, n, |i, j| sigma[(i, j)] * sign(i) * sign(j));
    Ok((xt, st))
}

/// Per-feature centering and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub enabled: bool,
}

impl StandardizationParams {
    pub fn identity(d: usize) -> Self {
        Self { means: vec![0.0; d], scales: vec![1.0; d], enabled: false }
    }

    /// Population mean and standard deviation of each feature row.
    /// Constant rows get scale 1.
    pub fn fit<T: Scalar>(x: &DMatrix<T>) -> Self {
        let n = x.ncols().max(1) as f64;
        let mut means = Vec::with_capacity(x.nrows());
        let mut scales = Vec::with_capacity(x.nrows());
        for row in x.row_iter() {
            let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
            let var = row.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 });
        }
        Self { means, scales, enabled: true }
    }

    pub fn d(&self) -> usize {
        self.means.len()
    }

    pub fn apply<T: Scalar>(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.nrows() != self.d() {
            return Err(CprError::DimensionMismatch(format!("{} features, expected {}", x.nrows(), self.d())));
        }
        if !self.enabled {
            return Ok(x.clone());
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            let v = (x[(i, j)].to_f64_lossy() - self.means[i]) / self.scales[i];
            // Rows that were constant map to exactly zero.
            T::of(if self.scales[i] == 1.0 && v.abs() < 1e-12 * self.means[i].abs().max(1.0) { 0.0 } else { v })
        }))
    }

    pub fn invert<T: Scalar>(&self, z: &DMatrix<T>) -> Result<DMatrix<T>> {
        if z.nrows() != self.d() {
            return Err(CprError::DimensionMismatch(format!("{} features, expected {}", z.nrows(), self.d())));
        }
        if !self.enabled {
            return Ok(z.clone());
        }
        Ok(DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            T::of(z[(i, j)].to_f64_lossy() * self.scales[i] + self.means[i])
        }))
    }
}

/// Centers every feature row and scales it to unit population standard deviation.
pub fn standardize<T: Scalar>(data: &Dataset<T>) -> Result<(Dataset<T>, StandardizationParams)> {
    let params = StandardizationParams::fit(data.x());
    let x = params.apply(data.x())?;
    Ok((data.with_x(x)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn data(x: DMatrix<f64>, labels: Vec<i8>) -> Dataset<f64> {
        Dataset::new(x, labels).unwrap()
    }

    #[test]
    fn linear_kernel_small_cases() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert_eq!(linear_kernel(&x).unwrap(), DMatrix::from_element(1, 1, 5.0));
        assert_eq!(linear_kernel(&DMatrix::<f64>::zeros(3, 4)).unwrap(), DMatrix::zeros(4, 4));
        let bad = DMatrix::from_element(1, 1, f64::NAN);
        assert!(matches!(linear_kernel(&bad), Err(CprError::NonFinite(_))));
    }

    #[test]
    fn linear_kernel_matches_double_loop() {
        let x = DMatrix::from_row_slice(3, 4, &[0.3, -1.2, 2.0, 0.5, 1.1, 0.0, -0.7, 0.9, -2.2, 0.4, 1.5, -0.1]);
        let k = linear_kernel(&x).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for r in 0..3 {
                    s += x[(r, i)] * x[(r, j)];
                }
                assert_relative_eq!(k[(i, j)], s, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rbf_kernel_values() {
        let side = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let k = rbf_kernel(&side, 1.0).unwrap();
        assert_eq!(k[(0, 2)], 1.0);
        assert_relative_eq!(k[(0, 1)], (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k[(0, 1)], 0.606_53, epsilon = 1e-5);
        assert_eq!(k, k.transpose());
        let mut prev = 0.0;
        for s in [0.5, 1.0, 2.0, 10.0, 100.0] {
            let v = rbf_kernel(&side, s).unwrap()[(0, 1)];
            assert!(v > prev && v <= 1.0);
            prev = v;
        }
        assert!(prev > 0.9999);
        assert!(rbf_kernel(&side, 0.0).is_err());
        assert!(rbf_kernel(&side, -1.0).is_err());
    }

    #[test]
    fn covariance_identity_only_and_composition() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -1.0, 0.0, 2.0, 1.0]);
        let d = data(x.clone(), vec![1, -1, 1]);
        let mut model = CovarianceModel::new(
            vec![KernelComponent::Identity, KernelComponent::Linear],
            vec![1.0, 0.0],
        )
        .unwrap();
        model.jitter = 0.0;
        assert_eq!(build_covariance(&model, &d).unwrap(), DMatrix::identity(3, 3));

        model.lambdas = vec![0.7, 1.3];
        let sigma = build_covariance(&model, &d).unwrap();
        let expect = KernelComponent::Identity.matrix(&d).unwrap() * 0.7 + linear_kernel(&x).unwrap() * 1.3;
        assert_relative_eq!(sigma, expect, epsilon = 1e-14);
        assert_relative_eq!(sigma.clone(), sigma.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn covariance_jitter_is_relative_to_trace() {
        let d = data(DMatrix::zeros(1, 2), vec![1, 1]);
        let model = CovarianceModel::new(vec![KernelComponent::Identity], vec![2.0]).unwrap();
        let sigma = build_covariance(&model, &d).unwrap();
        assert_relative_eq!(sigma[(0, 0)], 2.0 * (1.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn covariance_rejects_bad_models() {
        let d = data(DMatrix::zeros(1, 2), vec![1, 1]);
        assert!(CovarianceModel::new(vec![KernelComponent::Identity], vec![0.0]).is_err());
        assert!(CovarianceModel::new(vec![KernelComponent::Linear], vec![1.0]).is_err());
        assert!(CovarianceModel::new(vec![KernelComponent::Identity], vec![1.0, 2.0]).is_err());
        let rbf = CovarianceModel::new(
            vec![KernelComponent::Identity, KernelComponent::RbfSide { length_scale: 0.2 }],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(build_covariance(&rbf, &d).is_err(), "side features missing");
        let mut bad = CovarianceModel::identity_linear(1.0, 1.0);
        bad.components.push(KernelComponent::RbfSide { length_scale: -1.0 });
        bad.lambdas.push(1.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn absorb_identity_and_sign_flip() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (xt, st) = absorb_signs(&x, &[1, 1], &sigma).unwrap();
        assert_eq!((xt, st), (x.clone(), sigma.clone()));
        let (xt, st) = absorb_signs(&x, &[1, -1], &sigma).unwrap();
        assert_eq!(xt, DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, -4.0]));
        assert_eq!(st, DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]));
        assert!(matches!(absorb_signs(&x, &[1, 0], &sigma), Err(CprError::InvalidLabel { index: 1, .. })));
    }

    #[test]
    fn labels_zero_one_are_mapped() {
        let d = Dataset::<f64>::from_real_labels(DMatrix::zeros(1, 3), &[0.0, 1.0, -1.0]).unwrap();
        assert_eq!(d.labels(), &[-1, 1, -1]);
        assert!(Dataset::<f64>::from_real_labels(DMatrix::zeros(1, 1), &[2.0]).is_err());
        assert!(Dataset::<f64>::new(DMatrix::zeros(1, 2), vec![1]).is_err());
    }

    #[test]
    fn standardize_examples() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let (s, params) = standardize(&data(x.clone(), vec![1, 1, -1])).unwrap();
        let z = 1.5f64.sqrt();
        assert_relative_eq!(s.x()[(0, 0)], -z, epsilon = 1e-12);
        assert_eq!(s.x()[(0, 1)], 0.0);
        assert_relative_eq!(s.x()[(0, 2)], z, epsilon = 1e-12);
        assert_relative_eq!(s.x()[(0, 2)], 1.2247, epsilon = 1e-4);
        assert_eq!(s.x().row(1).iter().copied().collect::<Vec<_>>(), vec![0.0; 3]);
        assert_eq!(params.scales[1], 1.0);
        let (twice, _) = standardize(&s).unwrap();
        assert_relative_eq!(twice.x().clone(), s.x().clone(), epsilon = 1e-12);
        assert_relative_eq!(params.invert(s.x()).unwrap(), x, epsilon = 1e-12);
    }

    #[test]
    fn select_and_concat_track_precomputed_kernel() {
        let full = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { (i + j) as f64 * 0.1 });
        let d = data(DMatrix::from_fn(1, 4, |_, j| j as f64), vec![1, -1, 1, -1])
            .with_sample_kernel(SampleKernel::new(full.clone()).unwrap())
            .unwrap();
        let a = d.select(&[3, 1]).unwrap();
        let b = d.select(&[0]).unwrap();
        let joined = a.concat(&b).unwrap();
        assert_eq!(joined.sample_kernel().unwrap().index(), &[3, 1, 0]);
        let k = KernelComponent::Precomputed.matrix(&joined).unwrap();
        assert_eq!(k[(0, 1)], full[(3, 1)]);
        assert_eq!(k[(2, 0)], full[(0, 3)]);
        assert_eq!(joined.labels(), &[-1, -1, 1]);
    }

    fn random_instance() -> impl Strategy<Value = (DMatrix<f64>, Vec<i8>, f64, f64)> {
        (1usize..5, 1usize..6).prop_flat_map(|(d, n)| {
            (
                proptest::collection::vec(-3.0f64..3.0, d * n).prop_map(move |v| DMatrix::from_vec(d, n, v)),
                proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n),
                0.01f64..5.0,
                0.0f64..5.0,
            )
        })
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_psd((x, y, l1, l2) in random_instance()) {
            let d = data(x, y);
            let sigma = build_covariance(&CovarianceModel::identity_linear(l1, l2), &d).unwrap();
            prop_assert!((sigma.clone() - sigma.transpose()).amax() <= 1e-12);
            let eig = sigma.symmetric_eigen();
            prop_assert!(eig.eigenvalues.min() > 0.0);
            let k = linear_kernel(d.x()).unwrap();
            prop_assert!(k.symmetric_eigen().eigenvalues.min() >= -1e-8);
        }

        #[test]
        fn absorption_is_an_involution((x, y, l1, l2) in random_instance()) {
            let d = data(x.clone(), y.clone());
            let sigma = build_covariance(&CovarianceModel::identity_linear(l1, l2), &d).unwrap();
            let (xt, st) = absorb_signs(&x, &y, &sigma).unwrap();
            let (xb, sb) = absorb_signs(&xt, &y, &st).unwrap();
            prop_assert_eq!(xb, x);
            prop_assert_eq!(sb, sigma);
        }

        #[test]
        fn standardization_round_trips((x, y, _l1, _l2) in random_instance()) {
            let (s, params) = standardize(&data(x.clone(), y)).unwrap();
            prop_assert!(params.scales.iter().all(|&s| s > 0.0));
            let back = params.invert(s.x()).unwrap();
            prop_assert!((back - x).amax() <= 1e-10);
        }
    }
}
