//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, Write};

use cpr_core::io::{read_table_file, write_dataset, write_matrix};
use cpr_core::metrics::{accuracy, auc, auc_partial};
use cpr_core::model::{Dataset, KernelComponent};
use cpr_core::optim::{fit_cpr_l2, FitOptions, FittedModel, Lambdas, Method};
use cpr_core::orthant::{ep_moments, orthant_oracle, EpOptions, OracleMethod};
use cpr_core::predict::{linear_scores, predict_correlated, predict_independent, PredictionJoin, PredictionMode};
use cpr_core::{CprError, Result};
use cpr_experiments::benchmark::{BenchMethod, BenchmarkConfig, MethodGrids};
use cpr_experiments::correlation::{correlation_study, CorrelationStudy};
use cpr_experiments::grid::{evaluate, fit_cell, grid_search, GridConfig};
use cpr_experiments::split::{split, split_indices};
use cpr_experiments::synthetic::{generate_synthetic, orthant_problem, SyntheticSpec};
use cpr_experiments::run_benchmark;
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::load::{self, create};
use crate::{BenchArgs, CmdResult, DataArgs, DiagnoseArgs, EvalArgs, Failure, FitArgs, GridArgs, GridPreset, ModeArg, ModelArgs, PenaltyArg, PredictArgs, SynthArgs};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn bad(msg: impl Into<String>) -> CprError {
    CprError::InvalidInput(msg.into())
}

fn side_component(m: &ModelArgs, data: &Dataset<f64>) -> Option<KernelComponent> {
    if m.kernel.is_some() {
        Some(KernelComponent::Precomputed)
    } else if data.side().is_some() {
        Some(KernelComponent::RbfSide { length_scale: m.rbf_length_scale })
    } else {
        None
    }
}

fn with_kernel(data: Dataset<f64>, m: &ModelArgs) -> Result<Dataset<f64>> {
    match &m.kernel {
        Some(k) => Ok(load::attach_kernel(&[&data], load::kernel_matrix(k)?)?.remove(0)),
        None => Ok(data),
    }
}

fn train(data: &Dataset<f64>, m: &ModelArgs) -> Result<FittedModel> {
    let side = side_component(m, data);
    if side.is_none() && m.lambda3 != 0.0 {
        return Err(bad("--lambda3 needs --kernel or --side"));
    }
    let fit = FitOptions {
        max_iter: m.max_iter,
        abs_tol: m.abs_tol,
        rel_tol: m.rel_tol,
        standardize: !m.no_standardize,
        ..FitOptions::default()
    };
    let config = GridConfig { side_kernel: side, fit, ..GridConfig::default() };
    let l = Lambdas { lambda0: m.lambda0, lambda1: m.lambda1, lambda2: m.lambda2, lambda3: m.lambda3 };
    let method: Method = m.method.into();
    match m.penalty {
        PenaltyArg::L1 => fit_cell(data, method, &l, &config),
        PenaltyArg::L2 if method == Method::Cpr => fit_cpr_l2(data, &config.covariance(&l)?, l.lambda0, &fit),
        PenaltyArg::L2 => Err(bad("the l2 penalty is only available for cpr")),
    }
}

fn write_model(model: &FittedModel, dir: &std::path::Path) -> Result<()> {
    let mut w = create(dir, "model.json")?;
    model.write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn fit(a: &FitArgs) -> CmdResult {
    let data = with_kernel(load::labeled(&a.data)?, &a.model)?;
    let model = train(&data, &a.model)?.with_seed(a.seed);
    write_model(&model, &a.out)?;
    let mut trace = csv::Writer::from_writer(create(&a.out, "trace.csv")?);
    trace.write_record(["iteration", "objective", "step_decrease", "seed", "version"])?;
    for (i, f) in model.objective_trace.iter().enumerate() {
        let dec = model.step_decreases.get(i).map_or(String::new(), f64::to_string);
        trace.write_record([(i + 1).to_string(), f.to_string(), dec, a.seed.to_string(), VERSION.to_string()])?;
    }
    trace.flush()?;
    println!(
        "{}: {} of {} weights nonzero, {} iterations, objective {}",
        model.method,
        model.nonzeros(),
        model.d(),
        model.iterations,
        model.objective.map_or("n/a".into(), |v| format!("{v:.6}"))
    );
    if !model.converged {
        return Err(Failure::NotConverged(format!(
            "stopped after {} iterations with residuals {:.3e} / {:.3e}",
            model.iterations, model.primal_residual, model.dual_residual
        )));
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CmdResult {
    let model = FittedModel::read(BufReader::new(File::open(&a.model)?))?;
    let test = load::features(&a.data, &a.label_column, a.no_header, a.side.as_deref())?;
    let (labels, scores) = match a.mode {
        ModeArg::Independent => (predict_independent(&model, test.x())?, linear_scores(&model, test.x())?),
        ModeArg::Correlated | ModeArg::Exact => {
            let path = a.train.clone().ok_or_else(|| bad("correlated prediction needs --train"))?;
            let args = DataArgs { data: path, label_column: a.label_column.clone(), labels: None, no_header: a.no_header, side: a.train_side.clone() };
            let mut train = load::labeled(&args)?;
            let mut test = test;
            if let Some(k) = &a.kernel {
                let mut parts = load::attach_kernel(&[&train, &test], load::kernel_matrix(k)?)?;
                test = parts.pop().unwrap();
                train = parts.pop().unwrap();
            }
            let join = PredictionJoin::new(&model, &train, &test)?;
            let mode = if a.mode == ModeArg::Exact { PredictionMode::Exact } else { PredictionMode::PerSample };
            let p = predict_correlated(&model, &join, mode, &EpOptions::default())?;
            (p.labels, p.scores)
        }
    };
    let mut w = csv::Writer::from_writer(create(&a.out, "predictions.csv")?);
    w.write_record(["index", "label", "score", "seed", "version"])?;
    for (i, (l, s)) in labels.iter().zip(&scores).enumerate() {
        w.write_record([i.to_string(), l.to_string(), s.to_string(), a.seed.to_string(), VERSION.to_string()])?;
    }
    w.flush()?;
    println!("{} predictions written", labels.len());
    Ok(())
}

fn label_of(v: f64, line: usize) -> Result<i8> {
    match v {
        v if v == 1.0 => Ok(1),
        v if v == 0.0 || v == -1.0 => Ok(-1),
        v => Err(CprError::Parse { line, message: format!("label {v} is not 0/1 or ±1") }),
    }
}

/// The `label` and `score` columns of a predictions file; other columns may hold text.
fn read_predictions(path: &std::path::Path) -> Result<(Vec<i8>, Vec<f64>)> {
    let parse = |line: usize, m: String| CprError::Parse { line, message: m };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| parse(1, e.to_string()))?;
    let header = rdr.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| parse(1, format!("no column {name:?}")));
    let (lc, sc) = (col("label")?, col("score")?);
    let (mut labels, mut scores) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse(line, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            let f = rec.get(c).unwrap_or("");
            f.parse().map_err(|_| parse(line, format!("{f:?} is not a number")))
        };
        labels.push(label_of(num(lc)?, line)?);
        scores.push(num(sc)?);
    }
    Ok((labels, scores))
}

pub fn eval(a: &EvalArgs) -> CmdResult {
    let (predicted, scores) = read_predictions(&a.predictions)?;
    let truth = read_table_file(&a.truth, true)?;
    let tc = truth.column_index(&a.label_column)?;
    let labels = truth.rows.iter().enumerate().map(|(i, r)| label_of(r[tc], i + 2)).collect::<Result<Vec<_>>>()?;
    if labels.len() != predicted.len() {
        return Err(CprError::DimensionMismatch(format!("{} predictions for {} labels", predicted.len(), labels.len())).into());
    }
    let mut rows = vec![("accuracy", accuracy(&predicted, &labels)?)];
    for (name, v) in [("auc", auc(&scores, &labels)), ("auc01", auc_partial(&scores, &labels, 0.1))] {
        match v {
            Ok(v) => rows.push((name, v)),
            Err(CprError::Undefined(m)) => {
                warn!("{name}: {m}");
                rows.push((name, f64::NAN));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut w = csv::Writer::from_writer(create(&a.out, "metrics.csv")?);
    w.write_record(["metric", "value", "seed", "version"])?;
    for (name, v) in &rows {
        w.write_record([name.to_string(), v.to_string(), a.seed.to_string(), VERSION.to_string()])?;
        println!("{name}\t{v}");
    }
    w.flush()?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CmdResult {
    let spec = SyntheticSpec { d: a.d, n: a.n, k: a.k, seed: a.seed, ..SyntheticSpec::default() };
    let syn = generate_synthetic(&spec)?;
    let mut w = create(&a.out, "data.csv")?;
    write_dataset(&syn.data, &mut w)?;
    w.flush()?;
    let mut w = create(&a.out, "kernel.csv")?;
    write_matrix(&syn.side_cov, None, &mut w)?;
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(&a.out, "true_w.csv")?);
    w.write_record(["feature", "weight"])?;
    for (i, v) in syn.true_w.iter().enumerate() {
        w.write_record([format!("x{}", i + 1), v.to_string()])?;
    }
    w.flush()?;
    let parts = split_indices(syn.data.labels(), None, a.train_size, a.seed, a.stratify)?;
    let mut part = vec![""; a.n];
    for (name, idx) in [("train", &parts.train), ("validation", &parts.validation), ("test", &parts.test)] {
        for &i in idx {
            part[i] = name;
        }
    }
    let mut w = csv::Writer::from_writer(create(&a.out, "split.csv")?);
    w.write_record(["index", "part"])?;
    for (i, p) in part.iter().enumerate() {
        w.write_record([i.to_string(), p.to_string()])?;
    }
    w.flush()?;
    let manifest = json!({
        "tool_version": VERSION,
        "seed": a.seed,
        "spec": spec,
        "train_size": a.train_size,
        "stratify": a.stratify,
        "files": ["data.csv", "kernel.csv", "true_w.csv", "split.csv"],
    });
    std::fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("{} samples, {} features, {} true nonzeros", a.n, a.d, a.k);
    Ok(())
}

pub fn grid(a: &GridArgs) -> CmdResult {
    let margs = ModelArgs {
        method: a.method,
        lambda0: 1.0,
        lambda1: 1.0,
        lambda2: 0.0,
        lambda3: 0.0,
        kernel: a.kernel.clone(),
        rbf_length_scale: a.rbf_length_scale,
        penalty: PenaltyArg::L1,
        max_iter: 500,
        abs_tol: 1e-4,
        rel_tol: 1e-3,
        no_standardize: false,
    };
    let data = with_kernel(load::labeled(&a.data)?, &margs)?;
    let train_size = a.train_size.unwrap_or(data.n() / 2);
    let parts = split(&data, train_size, a.seed, a.stratify)?;
    let defaults = GridConfig::default();
    let config = GridConfig {
        lambda0: a.lambda0.clone().unwrap_or(defaults.lambda0),
        lambda1: a.lambda1.clone().unwrap_or(defaults.lambda1),
        lambda2: a.lambda2.clone().unwrap_or(defaults.lambda2),
        lambda3: a.lambda3.clone().unwrap_or(defaults.lambda3),
        side_kernel: side_component(&margs, &data),
        metric: a.metric.into(),
        ..defaults
    };
    let method: Method = a.method.into();
    let outcome = grid_search(&parts.train, &parts.validation, &config, method)?;
    let test_score = evaluate(&outcome.model, &parts.train, &parts.test, config.metric, &config.ep)?;
    let model = outcome.model.clone().with_seed(a.seed);
    write_model(&model, &a.out)?;
    let mut w = csv::Writer::from_writer(create(&a.out, "grid.csv")?);
    w.write_record(["lambda0", "lambda1", "lambda2", "lambda3", "score", "nonzeros", "converged", "seconds", "error", "seed", "version"])?;
    for c in &outcome.cells {
        let l = c.lambdas;
        w.write_record([
            l.lambda0.to_string(),
            l.lambda1.to_string(),
            l.lambda2.to_string(),
            l.lambda3.to_string(),
            c.score.map_or(String::new(), |s| s.to_string()),
            c.nonzeros.map_or(String::new(), |s| s.to_string()),
            c.converged.map_or(String::new(), |s| s.to_string()),
            c.seconds.to_string(),
            c.error.clone().unwrap_or_default(),
            a.seed.to_string(),
            VERSION.to_string(),
        ])?;
    }
    w.flush()?;
    let summary = json!({
        "tool_version": VERSION,
        "seed": a.seed,
        "method": method,
        "metric": config.metric,
        "selected": model.lambdas,
        "validation_score": outcome.validation_score,
        "test_score": test_score,
        "boundary_hits": outcome.boundary_hits,
        "grid": { "lambda0": config.lambda0, "lambda1": config.lambda1, "lambda2": config.lambda2, "lambda3": config.lambda3 },
    });
    std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    for h in &outcome.boundary_hits {
        eprintln!("warning: selected {h} lies on the grid boundary");
    }
    println!("validation {:.4}, test {:.4}, selected {:?}", outcome.validation_score, test_score, model.lambdas);
    Ok(())
}

pub fn benchmark(a: &BenchArgs) -> CmdResult {
    let methods = a.methods.iter().map(|m| m.parse::<BenchMethod>()).collect::<Result<Vec<_>>>()?;
    let config = BenchmarkConfig {
        spec: SyntheticSpec { d: a.d, n: a.n, ..SyntheticSpec::default() },
        ks: a.ks.clone(),
        repetitions: a.repetitions,
        train_size: a.train_size,
        methods,
        grids: match a.grid {
            GridPreset::Desk => MethodGrids::desk(),
            GridPreset::Full => MethodGrids::full(),
        },
        stratify: a.stratify,
        seed: a.seed,
    };
    let report = run_benchmark(&config)?;
    report.write(&a.out)?;
    println!("k\tmethod\tmean\tse\tfailures\tseconds");
    for s in &report.summaries {
        println!("{}\t{}\t{:.4}\t{:.4}\t{}\t{:.2}", s.k, s.method, s.mean, s.std_error, s.failures, s.mean_seconds);
    }
    Ok(())
}

pub fn diagnose(a: &DiagnoseArgs) -> CmdResult {
    if !(1..=cpr_core::orthant::MAX_QUADRATURE_DIM).contains(&a.ep_dim) {
        return Err(bad(format!("--ep-dim must lie in 1..={}", cpr_core::orthant::MAX_QUADRATURE_DIM)).into());
    }
    let nodes = match a.ep_dim {
        1 | 2 => 96,
        3 => 48,
        _ => 20,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut w = csv::Writer::from_writer(create(&a.out, "ep_oracle.csv")?);
    w.write_record(["instance", "n", "mean_gap", "log_mass_gap", "seed", "version"])?;
    let (mut worst_mean, mut worst_mass) = (0.0f64, 0.0f64);
    for i in 0..a.ep_instances {
        let (mu, sigma) = orthant_problem(&mut rng, a.ep_dim);
        let (ep, _) = ep_moments(&mu, &sigma, None, &EpOptions::default())?;
        let exact = orthant_oracle(&mu, &sigma, OracleMethod::Quadrature { nodes })?.moments;
        let mean_gap = (&ep.mean - &exact.mean).amax();
        let mass_gap = (ep.log_mass - exact.log_mass).abs();
        worst_mean = worst_mean.max(mean_gap);
        worst_mass = worst_mass.max(mass_gap);
        w.write_record([i.to_string(), a.ep_dim.to_string(), mean_gap.to_string(), mass_gap.to_string(), a.seed.to_string(), VERSION.to_string()])?;
    }
    w.flush()?;
    println!("EP vs quadrature over {} instances: max mean gap {worst_mean:.3e}, max log-mass gap {worst_mass:.3e}", a.ep_instances);
    if let Some(path) = &a.data {
        let args = DataArgs { data: path.clone(), label_column: a.label_column.clone(), labels: None, no_header: a.no_header, side: a.side.clone() };
        let data = with_kernel(load::labeled(&args)?, &a.model)?;
        let study = CorrelationStudy { repetitions: a.repetitions, fraction: a.fraction, seed: a.seed };
        let curve = correlation_study(&data, &study, |d| train(d, &a.model))?;
        let mut w = csv::Writer::from_writer(create(&a.out, "correlation.csv")?);
        w.write_record(["index", "mean", "std_error", "seed", "version"])?;
        for (i, (m, s)) in curve.mean.iter().zip(&curve.std_error).enumerate() {
            w.write_record([(i + 1).to_string(), m.to_string(), s.to_string(), a.seed.to_string(), VERSION.to_string()])?;
        }
        w.flush()?;
        println!("correlation curve over {} fits written", a.repetitions);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_problem_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..5 {
            let (mu, sigma) = orthant_problem(&mut rng, n);
            assert_eq!(mu.len(), n);
            assert!(sigma.cholesky().is_some());
        }
    }

    #[test]
    fn exit_codes_partition_errors() {
        assert_eq!(Failure::from(bad("x")).code(), crate::EXIT_BAD_INPUT);
        assert_eq!(Failure::from(CprError::Parse { line: 3, message: "x".into() }).code(), crate::EXIT_BAD_INPUT);
        assert_eq!(Failure::from(CprError::EpFailure("x".into())).code(), crate::EXIT_NUMERICAL);
        assert_eq!(Failure::NotConverged("x".into()).code(), crate::EXIT_NOT_CONVERGED);
    }
}
