//! Hyperparameter grid search scored on a validation set.

use std::time::Instant;

use cpr_core::metrics::{accuracy, auc, auc_partial};
use cpr_core::model::{CovarianceModel, Dataset, KernelComponent};
use cpr_core::optim::{fit_cpr, fit_cpr_map, fit_probit, FitOptions, FittedModel, Lambdas, Method};
use cpr_core::orthant::EpOptions;
use cpr_core::predict::{predict_correlated, predict_independent, linear_scores, PredictionJoin, PredictionMode};
use cpr_core::{CprError, Result};
use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    Auc,
    /// ROC area over false-positive rates `[0, 0.1]`, normalized.
    Auc01,
}

impl std::str::FromStr for Metric {
    type Err = CprError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "auc" => Ok(Self::Auc),
            "auc01" => Ok(Self::Auc01),
            _ => Err(CprError::InvalidInput(format!("unknown metric {s:?}"))),
        }
    }
}

impl Metric {
    pub fn score(self, labels: &[i8], predicted: &[i8], scores: &[f64]) -> Result<f64> {
        match self {
            Self::Accuracy => accuracy(predicted, labels),
            Self::Auc => auc(scores, labels),
            Self::Auc01 => auc_partial(scores, labels, 0.1),
        }
    }
}

/// Value lists per hyperparameter. Lists a method does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    /// Third covariance term; `None` drops `λ₃`.
    pub side_kernel: Option<KernelComponent>,
    pub metric: Metric,
    pub fit: FitOptions,
    /// EP settings for correlated prediction.
    pub ep: EpOptions,
}

fn log_spaced(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    (0..k).map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp()).collect()
}

impl Default for GridConfig {
    /// Five log-spaced values in `[0.1, 1000]` per kernel weight and
    /// `λ₀ ∈ {0.01, 0.1, 1, 10}`.
    fn default() -> Self {
        let g = log_spaced(0.1, 1000.0, 5);
        Self {
            lambda0: vec![0.01, 0.1, 1.0, 10.0],
            lambda1: g.clone(),
            lambda2: g.clone(),
            lambda3: g,
            side_kernel: None,
            metric: Metric::Accuracy,
            fit: FitOptions::default(),
            ep: EpOptions::default(),
        }
    }
}

impl GridConfig {
    fn uses(method: Method) -> [bool; 4] {
        match method {
            Method::Cpr => [true, true, true, true],
            Method::CprMap => [true, true, true, false],
            Method::Probit => [true, true, false, false],
            Method::GpLimit => [false, true, true, true],
        }
    }

    /// Every cell for `method`, in lexicographic `(λ₀, λ₁, λ₂, λ₃)` order.
    pub fn cells(&self, method: Method) -> Result<Vec<Lambdas>> {
        let used = Self::uses(method);
        let side = self.side_kernel.is_some();
        let pick = |on: bool, v: &Vec<f64>, name: &str| -> Result<Vec<f64>> {
            if !on {
                return Ok(vec![0.0]);
            }
            if v.is_empty() {
                return Err(CprError::InvalidInput(format!("empty {name} grid")));
            }
            Ok(v.clone())
        };
        let l0 = pick(used[0], &self.lambda0, "λ₀")?;
        let l1 = pick(used[1], &self.lambda1, "λ₁")?;
        let l2 = pick(used[2], &self.lambda2, "λ₂")?;
        let l3 = pick(used[3] && side, &self.lambda3, "λ₃")?;
        let mut out = Vec::new();
        for &lambda0 in &l0 {
            for &lambda1 in &l1 {
                for &lambda2 in &l2 {
                    for &lambda3 in &l3 {
                        out.push(Lambdas { lambda0, lambda1, lambda2, lambda3 });
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn covariance(&self, l: &Lambdas) -> Result<CovarianceModel> {
        let mut comps = vec![KernelComponent::Identity, KernelComponent::Linear];
        let mut lams = vec![l.lambda1, l.lambda2];
        if let Some(side) = self.side_kernel {
            comps.push(side);
            lams.push(l.lambda3);
        }
        CovarianceModel::new(comps, lams)
    }
}

/// Trains `method` at one grid cell.
pub fn fit_cell(train: &Dataset<f64>, method: Method, l: &Lambdas, config: &GridConfig) -> Result<FittedModel> {
    let opts = &config.fit;
    match method {
        Method::Cpr => fit_cpr(train, &config.covariance(l)?, l.lambda0, opts),
        Method::CprMap => fit_cpr_map(train, l.lambda1, l.lambda2, l.lambda0, opts),
        Method::Probit => fit_probit(train, l.lambda1, l.lambda0, opts),
        Method::GpLimit => {
            let cov = config.covariance(l)?;
            let std = if opts.standardize {
                cpr_core::model::StandardizationParams::fit(train.x())
            } else {
                cpr_core::model::StandardizationParams::identity(train.d())
            };
            let mut m = FittedModel::blank(Method::GpLimit, 0.0, cov, std);
            m.feature_names = train.names().map(<[String]>::to_vec);
            Ok(m)
        }
    }
}

/// Labels and scores for `test`; correlated methods condition on `train`.
pub fn predict_with(model: &FittedModel, train: &Dataset<f64>, test: &Dataset<f64>, ep: &EpOptions) -> Result<(Vec<i8>, Vec<f64>)> {
    match model.method {
        Method::Cpr | Method::GpLimit => {
            let join = PredictionJoin::new(model, train, test)?;
            let p = predict_correlated(model, &join, PredictionMode::PerSample, ep)?;
            Ok((p.labels, p.scores))
        }
        Method::CprMap | Method::Probit => Ok((predict_independent(model, test.x())?, linear_scores(model, test.x())?)),
    }
}

pub fn evaluate(model: &FittedModel, train: &Dataset<f64>, test: &Dataset<f64>, metric: Metric, ep: &EpOptions) -> Result<f64> {
    let (labels, scores) = predict_with(model, train, test, ep)?;
    metric.score(test.labels(), &labels, &scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub lambdas: Lambdas,
    pub score: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
    pub nonzeros: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub model: FittedModel,
    pub validation_score: f64,
    pub cells: Vec<CellReport>,
    /// Hyperparameters whose selected value sits on the edge of its list.
    pub boundary_hits: Vec<String>,
    pub seconds: f64,
}

/// `a` beats `b`: higher score, then larger `λ₀`, then lexicographically smaller `(λ₁, λ₂, λ₃)`.
fn better(a: (f64, &Lambdas), b: (f64, &Lambdas)) -> bool {
    use std::cmp::Ordering::*;
    match a.0.total_cmp(&b.0) {
        Greater => true,
        Less => false,
        Equal => match a.1.lambda0.total_cmp(&b.1.lambda0) {
            Greater => true,
            Less => false,
            Equal => {
                let ka = [a.1.lambda1, a.1.lambda2, a.1.lambda3];
                let kb = [b.1.lambda1, b.1.lambda2, b.1.lambda3];
                ka.iter().zip(&kb).map(|(x, y)| x.total_cmp(y)).find(|o| *o != Equal) == Some(Less)
            }
        },
    }
}

/// Fits every cell on `train`, scores it on `validation`, and returns the best model.
pub fn grid_search(train: &Dataset<f64>, validation: &Dataset<f64>, config: &GridConfig, method: Method) -> Result<GridOutcome> {
    let start = Instant::now();
    let cells = config.cells(method)?;
    let results: Vec<(CellReport, Option<FittedModel>)> = cells
        .par_iter()
        .map(|l| {
            let t = Instant::now();
            let run = fit_cell(train, method, l, config)
                .and_then(|m| evaluate(&m, train, validation, config.metric, &config.ep).map(|s| (m, s)));
            let seconds = t.elapsed().as_secs_f64();
            match run {
                Ok((m, s)) => (
                    CellReport { lambdas: *l, score: Some(s), error: None, seconds, nonzeros: Some(m.nonzeros()), converged: Some(m.converged) },
                    Some(m),
                ),
                Err(e) => (
                    CellReport { lambdas: *l, score: None, error: Some(e.to_string()), seconds, nonzeros: None, converged: None },
                    None,
                ),
            }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, (r, _)) in results.iter().enumerate() {
        if let Some(s) = r.score {
            if best.is_none_or(|b| better((s, &r.lambdas), (results[b].0.score.unwrap(), &results[b].0.lambdas))) {
                best = Some(i);
            }
        }
    }
    let Some(b) = best else {
        let causes: Vec<String> = results.iter().filter_map(|(r, _)| r.error.clone()).collect();
        return Err(CprError::Numerical(format!("every grid cell failed: {}", causes.join("; "))));
    };
    let chosen = results[b].0.lambdas;
    let boundary_hits = boundary(config, method, &chosen);
    for h in &boundary_hits {
        warn!("{method}: selected {h} lies on the grid boundary");
    }
    let (cells, models): (Vec<CellReport>, Vec<Option<FittedModel>>) = results.into_iter().unzip();
    let model = models.into_iter().nth(b).flatten().expect("best cell has a model");
    Ok(GridOutcome { model, validation_score: cells[b].score.unwrap(), cells, boundary_hits, seconds: start.elapsed().as_secs_f64() })
}

fn boundary(config: &GridConfig, method: Method, l: &Lambdas) -> Vec<String> {
    let used = GridConfig::uses(method);
    let lists = [
        ("λ₀", &config.lambda0, l.lambda0, used[0]),
        ("λ₁", &config.lambda1, l.lambda1, used[1]),
        ("λ₂", &config.lambda2, l.lambda2, used[2]),
        ("λ₃", &config.lambda3, l.lambda3, used[3] && config.side_kernel.is_some()),
    ];
    lists
        .into_iter()
        .filter(|(_, v, x, on)| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            *on && v.len() > 1 && (*x == lo || *x == hi)
        })
        .map(|(name, _, x, _)| format!("{name} = {x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(l0: f64, l1: f64, l2: f64) -> Lambdas {
        Lambdas { lambda0: l0, lambda1: l1, lambda2: l2, lambda3: 0.0 }
    }

    #[test]
    fn tie_break_prefers_sparser_then_smaller_lambdas() {
        assert!(better((0.8, &l(0.1, 1.0, 1.0)), (0.7, &l(10.0, 1.0, 1.0))));
        assert!(better((0.8, &l(1.0, 1.0, 1.0)), (0.8, &l(0.1, 1.0, 1.0))));
        assert!(better((0.8, &l(1.0, 1.0, 0.1)), (0.8, &l(1.0, 1.0, 1.0))));
        assert!(!better((0.8, &l(1.0, 1.0, 1.0)), (0.8, &l(1.0, 1.0, 1.0))));
    }

    #[test]
    fn default_grid_shape() {
        let g = GridConfig::default();
        assert_eq!(g.lambda1.len(), 5);
        assert!((g.lambda1[0] - 0.1).abs() < 1e-12 && (g.lambda1[4] - 1000.0).abs() < 1e-9);
        assert_eq!(g.cells(Method::Probit).unwrap().len(), 20);
        assert_eq!(g.cells(Method::Cpr).unwrap().len(), 100);
        let with_side = GridConfig { side_kernel: Some(KernelComponent::Precomputed), ..g };
        assert_eq!(with_side.cells(Method::GpLimit).unwrap().len(), 125);
        let empty = GridConfig { lambda0: vec![], ..GridConfig::default() };
        assert!(empty.cells(Method::Probit).is_err());
        assert_eq!(empty.cells(Method::GpLimit).unwrap().len(), 25);
    }

    #[test]
    fn metric_parse() {
        assert_eq!("auc01".parse::<Metric>().unwrap(), Metric::Auc01);
        assert!("f1".parse::<Metric>().is_err());
    }
}
