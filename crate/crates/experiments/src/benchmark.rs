//! Repetition harness: generate, split, select hyperparameters, test.

use std::fs;
use std::path::Path;
use std::time::Instant;

use cpr_core::model::{CovarianceModel, KernelComponent, StandardizationParams};
use cpr_core::optim::{FittedModel, Lambdas, Method};
use cpr_core::orthant::EpOptions;
use cpr_core::{CprError, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{evaluate, grid_search, GridConfig, Metric};
use crate::split::split;
use crate::synthetic::{generate_synthetic, Synthetic, SyntheticSpec};

/// Identity weight added to `Σ_side` for the oracle so the covariance is well conditioned.
pub const ORACLE_IDENTITY: f64 = 1e-6;

/// Fraction of repetitions that must succeed for a (k, method) summary.
pub const MIN_SUCCESS_RATE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    Cpr,
    CprMap,
    Probit,
    GpLimit,
    /// Correlated prediction with the generating weights and noise covariance.
    Oracle,
}

impl BenchMethod {
    pub const ALL: [Self; 5] = [Self::Cpr, Self::CprMap, Self::Probit, Self::GpLimit, Self::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            m => m.fitted().unwrap().name(),
        }
    }

    pub fn fitted(self) -> Option<Method> {
        match self {
            Self::Cpr => Some(Method::Cpr),
            Self::CprMap => Some(Method::CprMap),
            Self::Probit => Some(Method::Probit),
            Self::GpLimit => Some(Method::GpLimit),
            Self::Oracle => None,
        }
    }
}

impl std::fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = CprError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CprError::InvalidInput(format!("unknown method {s:?}")))
    }
}

/// One grid per fitted method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodGrids {
    pub cpr: GridConfig,
    pub cpr_map: GridConfig,
    pub probit: GridConfig,
    pub gp_limit: GridConfig,
}

impl MethodGrids {
    pub fn get(&self, m: Method) -> &GridConfig {
        match m {
            Method::Cpr => &self.cpr,
            Method::CprMap => &self.cpr_map,
            Method::Probit => &self.probit,
            Method::GpLimit => &self.gp_limit,
        }
    }

    /// The full default grid for every method, with the sample kernel as third term.
    pub fn full() -> Self {
        let base = GridConfig { side_kernel: Some(KernelComponent::Precomputed), ..GridConfig::default() };
        Self { cpr: base.clone(), cpr_map: base.clone(), probit: base.clone(), gp_limit: base }
    }

    /// Reduced grids sized for a single core. `λ₁` is pinned to 1: the
    /// likelihood only sees `Xᵀw` relative to the noise scale, so an
    /// overall covariance scale is absorbed by the weights.
    pub fn desk() -> Self {
        let base = GridConfig {
            lambda1: vec![1.0],
            side_kernel: Some(KernelComponent::Precomputed),
            metric: Metric::Accuracy,
            ..GridConfig::default()
        };
        Self {
            probit: GridConfig { lambda0: vec![0.1, 0.3, 1.0, 3.0, 10.0], ..base.clone() },
            gp_limit: GridConfig { lambda2: vec![0.0, 0.1, 1.0], lambda3: vec![0.1, 1.0, 10.0], ..base.clone() },
            cpr_map: GridConfig { lambda2: vec![0.01, 0.1, 1.0], lambda0: vec![0.3, 1.0, 3.0], ..base.clone() },
            cpr: GridConfig { lambda2: vec![0.0, 0.1], lambda3: vec![1.0, 10.0], lambda0: vec![1.0, 3.0, 10.0], ..base },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub spec: SyntheticSpec,
    pub ks: Vec<usize>,
    pub repetitions: usize,
    pub train_size: usize,
    pub methods: Vec<BenchMethod>,
    pub grids: MethodGrids,
    pub stratify: bool,
    /// Base seed; repetition seeds derive from it.
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            spec: SyntheticSpec::default(),
            ks: vec![2, 10, 25, 50],
            repetitions: 50,
            train_size: 100,
            methods: BenchMethod::ALL.to_vec(),
            grids: MethodGrids::desk(),
            stratify: false,
            seed: 20,
        }
    }
}

/// Seed of repetition `r`; shared across `k` so every `k` sees the same draws of `A` and `X`.
pub fn repetition_seed(base: u64, r: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub k: usize,
    pub repetition: usize,
    pub seed: u64,
    pub method: BenchMethod,
    pub accuracy: Option<f64>,
    pub validation_score: Option<f64>,
    pub lambdas: Option<Lambdas>,
    pub nonzeros: Option<usize>,
    pub boundary_hits: Vec<String>,
    pub error: Option<String>,
    /// Hyperparameter search plus training time.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub k: usize,
    pub method: BenchMethod,
    pub mean: f64,
    pub std_error: f64,
    pub successes: usize,
    pub failures: usize,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tool_version: String,
    pub seed: u64,
    pub config: BenchmarkConfig,
    pub summaries: Vec<MethodSummary>,
    pub results: Vec<RepetitionResult>,
}

impl BenchmarkReport {
    pub fn summary(&self, k: usize, method: BenchMethod) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.k == k && s.method == method)
    }

    pub fn mean(&self, k: usize, method: BenchMethod) -> Option<f64> {
        self.summary(k, method).map(|s| s.mean)
    }

    /// Writes `summary.csv`, `repetitions.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let csv_err = |e: csv::Error| CprError::InvalidInput(format!("csv: {e}"));
        let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
        w.write_record(["k", "method", "mean_accuracy", "std_error", "successes", "failures", "mean_seconds", "seed", "version"])
            .map_err(csv_err)?;
        for s in &self.summaries {
            w.write_record([
                s.k.to_string(),
                s.method.to_string(),
                s.mean.to_string(),
                s.std_error.to_string(),
                s.successes.to_string(),
                s.failures.to_string(),
                s.mean_seconds.to_string(),
                self.seed.to_string(),
                self.tool_version.clone(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("repetitions.csv")).map_err(csv_err)?;
        w.write_record(["k", "repetition", "seed", "method", "accuracy", "lambda0", "lambda1", "lambda2", "lambda3", "nonzeros", "seconds", "error"])
            .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.results {
            let l = r.lambdas;
            w.write_record([
                r.k.to_string(),
                r.repetition.to_string(),
                r.seed.to_string(),
                r.method.to_string(),
                opt(r.accuracy),
                opt(l.map(|l| l.lambda0)),
                opt(l.map(|l| l.lambda1)),
                opt(l.map(|l| l.lambda2)),
                opt(l.map(|l| l.lambda3)),
                r.nonzeros.map_or(String::new(), |n| n.to_string()),
                r.seconds.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Generating weights with `Σ = ORACLE_IDENTITY·I + Σ_side` on unstandardized features.
pub fn oracle_model(syn: &Synthetic) -> Result<FittedModel> {
    let cov = CovarianceModel::new(vec![KernelComponent::Identity, KernelComponent::Precomputed], vec![ORACLE_IDENTITY, 1.0])?;
    let d = syn.true_w.len();
    FittedModel::from_weights(Method::Cpr, syn.true_w.iter().copied().collect(), cov, StandardizationParams::identity(d))
}

fn run_one(config: &BenchmarkConfig, syn: &Synthetic, k: usize, r: usize, seed: u64, method: BenchMethod) -> RepetitionResult {
    let start = Instant::now();
    let mut out = RepetitionResult {
        k,
        repetition: r,
        seed,
        method,
        accuracy: None,
        validation_score: None,
        lambdas: None,
        nonzeros: None,
        boundary_hits: Vec::new(),
        error: None,
        seconds: 0.0,
    };
    let mut run = || -> Result<()> {
        let parts = split(&syn.data, config.train_size, seed, config.stratify)?;
        let ep = EpOptions::default();
        match method.fitted() {
            None => {
                let model = oracle_model(syn)?;
                out.accuracy = Some(evaluate(&model, &parts.train, &parts.test, Metric::Accuracy, &ep)?);
                out.nonzeros = Some(model.nonzeros());
            }
            Some(m) => {
                let grid = config.grids.get(m);
                let g = grid_search(&parts.train, &parts.validation, grid, m)?;
                out.validation_score = Some(g.validation_score);
                out.lambdas = Some(g.model.lambdas);
                out.nonzeros = Some(g.model.nonzeros());
                out.boundary_hits = g.boundary_hits;
                out.accuracy = Some(evaluate(&g.model, &parts.train, &parts.test, Metric::Accuracy, &grid.ep)?);
            }
        }
        Ok(())
    };
    if let Err(e) = run() {
        warn!("k = {k}, repetition {r}, {method}: {e}");
        out.accuracy = None;
        out.error = Some(e.to_string());
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Summarizes per-(k, method) results in the order of `ks` and `methods`.
pub fn summarize(ks: &[usize], methods: &[BenchMethod], results: &[RepetitionResult]) -> Result<Vec<MethodSummary>> {
    let mut out = Vec::new();
    for &k in ks {
        for &method in methods {
            let rows: Vec<&RepetitionResult> = results.iter().filter(|r| r.k == k && r.method == method).collect();
            let acc: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
            let total = rows.len();
            if total == 0 {
                continue;
            }
            if (acc.len() as f64) < MIN_SUCCESS_RATE * total as f64 {
                let causes: Vec<String> = rows.iter().filter_map(|r| r.error.clone()).collect();
                return Err(CprError::Numerical(format!(
                    "{method} at k = {k}: only {} of {total} repetitions succeeded ({})",
                    acc.len(),
                    causes.join("; ")
                )));
            }
            let (mean, std_error) = mean_and_se(&acc);
            out.push(MethodSummary {
                k,
                method,
                mean,
                std_error,
                successes: acc.len(),
                failures: total - acc.len(),
                mean_seconds: rows.iter().map(|r| r.seconds).sum::<f64>() / total as f64,
            });
        }
    }
    Ok(out)
}

/// Runs every (k, repetition) in parallel; methods within a repetition share one split.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if config.methods.is_empty() {
        return Err(CprError::InvalidInput("no methods to benchmark".into()));
    }
    if config.ks.is_empty() || config.repetitions == 0 {
        return Err(CprError::InvalidInput("need at least one k and one repetition".into()));
    }
    if let Some(k) = config.ks.iter().find(|&&k| k > config.spec.d) {
        return Err(CprError::InvalidInput(format!("k = {k} exceeds d = {}", config.spec.d)));
    }
    let jobs: Vec<(usize, usize)> = config.ks.iter().flat_map(|&k| (0..config.repetitions).map(move |r| (k, r))).collect();
    let results: Vec<Vec<RepetitionResult>> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let seed = repetition_seed(config.seed, r);
            let syn = generate_synthetic(&config.spec.with_k(k).with_seed(seed));
            let rows: Vec<RepetitionResult> = match syn {
                Ok(syn) => config.methods.iter().map(|&m| run_one(config, &syn, k, r, seed, m)).collect(),
                Err(e) => config
                    .methods
                    .iter()
                    .map(|&method| RepetitionResult {
                        k,
                        repetition: r,
                        seed,
                        method,
                        accuracy: None,
                        validation_score: None,
                        lambdas: None,
                        nonzeros: None,
                        boundary_hits: Vec::new(),
                        error: Some(e.to_string()),
                        seconds: 0.0,
                    })
                    .collect(),
            };
            info!("k = {k}, repetition {r} done");
            rows
        })
        .collect();
    let results: Vec<RepetitionResult> = results.into_iter().flatten().collect();
    let summaries = summarize(&config.ks, &config.methods, &results)?;
    Ok(BenchmarkReport { tool_version: env!("CARGO_PKG_VERSION").to_string(), seed: config.seed, config: config.clone(), summaries, results })
}
