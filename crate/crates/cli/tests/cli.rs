use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpr")).args(args).output().expect("run cpr")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, k: &str, seed: &str) {
    let out = cpr(&["synth", "--k", k, "--seed", seed, "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn model(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("model.json")).unwrap()).unwrap()
}

#[test]
fn synth_is_byte_identical_for_a_fixed_seed() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    synth(&a, "10", "7");
    synth(&b, "10", "7");
    synth(&c, "10", "8");
    for f in ["data.csv", "kernel.csv", "true_w.csv", "split.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("data.csv")).unwrap(), fs::read(c.join("data.csv")).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["tool_version"], env!("CARGO_PKG_VERSION"));
    let split = fs::read_to_string(a.join("split.csv")).unwrap();
    assert_eq!(split.matches(",train").count(), 100);
    assert_eq!(split.matches(",validation").count(), 50);
}

#[test]
fn fit_on_synthetic_defaults_converges_sparse() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "10", "20");
    let f = t.path().join("f");
    let out = cpr(&["fit", "--data", p(&s.join("data.csv")), "--kernel", p(&s.join("kernel.csv")), "--lambda3", "1", "--seed", "5", "--out", p(&f)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = model(&f);
    assert_eq!(m["converged"], true);
    assert_eq!(m["seed"], 5);
    let nz = m["weights"].as_array().unwrap().iter().filter(|w| w.as_f64().unwrap() != 0.0).count();
    assert!(nz < 50, "{nz} nonzeros");
    let trace = fs::read_to_string(f.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,step_decrease,seed,version"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn huge_lambda0_zeroes_every_weight() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "5", "3");
    let f = t.path().join("f");
    let out = cpr(&["fit", "--data", p(&s.join("data.csv")), "--lambda0", "1e6", "--out", p(&f)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model(&f)["weights"].as_array().unwrap().iter().all(|w| w.as_f64().unwrap() == 0.0));
}

#[test]
fn bad_input_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "5", "3");
    let out = cpr(&["fit", "--data", p(&s.join("data.csv")), "--label-column", "y", "--out", p(&t.path().join("f"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));

    let bad = t.path().join("bad.csv");
    fs::write(&bad, "a,b,label\n1,2,1\n3,oops,0\n").unwrap();
    let out = cpr(&["fit", "--data", p(&bad), "--out", p(&t.path().join("g"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = cpr(&["fit", "--data", p(&t.path().join("missing.csv")), "--out", p(&t.path().join("h"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cpr(&["fit", "--bogus"]).status.code(), Some(2));
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "10", "4");
    let f = t.path().join("f");
    let out = cpr(&["fit", "--data", p(&s.join("data.csv")), "--lambda0", "0.1", "--max-iter", "1", "--out", p(&f)]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(model(&f)["converged"], false);
}

#[test]
fn predict_and_eval_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "10", "9");
    let f = t.path().join("f");
    let data = s.join("data.csv");
    assert!(cpr(&["fit", "--data", p(&data), "--method", "probit", "--lambda0", "3", "--out", p(&f)]).status.success());
    let pr = t.path().join("p");
    let out = cpr(&["predict", "--model", p(&f.join("model.json")), "--data", p(&data), "--seed", "11", "--out", p(&pr)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = fs::read_to_string(pr.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 201);
    assert!(preds.lines().nth(1).unwrap().ends_with(&format!(",11,{}", env!("CARGO_PKG_VERSION"))));

    // Predictions that copy the truth score perfectly.
    let truth: Vec<String> = fs::read_to_string(&data).unwrap().lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
    let perfect = t.path().join("perfect.csv");
    let mut body = String::from("index,label,score\n");
    for (i, l) in truth.iter().enumerate() {
        body.push_str(&format!("{i},{l},{l}\n"));
    }
    fs::write(&perfect, body).unwrap();
    let e = t.path().join("e");
    assert!(cpr(&["eval", "--predictions", p(&perfect), "--truth", p(&data), "--out", p(&e)]).status.success());
    let metrics = fs::read_to_string(e.join("metrics.csv")).unwrap();
    assert!(metrics.contains("accuracy,1,"), "{metrics}");
    assert!(metrics.contains("auc,1,"), "{metrics}");
}

#[test]
fn correlated_prediction_needs_training_data() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "2", "1");
    let f = t.path().join("f");
    assert!(cpr(&["fit", "--data", p(&s.join("data.csv")), "--lambda2", "0.1", "--out", p(&f)]).status.success());
    let m = f.join("model.json");
    let out = cpr(&["predict", "--model", p(&m), "--data", p(&s.join("data.csv")), "--mode", "correlated", "--out", p(&t.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = cpr(&[
        "predict", "--model", p(&m), "--data", p(&s.join("data.csv")), "--mode", "correlated", "--train", p(&s.join("data.csv")), "--out",
        p(&t.path().join("q")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn diagnose_reports_small_ep_gaps() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("d");
    let out = cpr(&["diagnose", "--ep-dim", "2", "--ep-instances", "10", "--seed", "3", "--out", p(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(d.join("ep_oracle.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 10);
    for r in rows {
        assert!(r[2].parse::<f64>().unwrap() < 1e-2);
        assert!(r[3].parse::<f64>().unwrap() < 1e-2);
    }
    assert_eq!(cpr(&["diagnose", "--ep-dim", "9", "--out", p(&d)]).status.code(), Some(2));
}

#[test]
fn grid_and_benchmark_write_stamped_reports() {
    let t = tempfile::tempdir().unwrap();
    let s = t.path().join("s");
    synth(&s, "2", "2");
    let g = t.path().join("g");
    let out = cpr(&[
        "grid", "--data", p(&s.join("data.csv")), "--method", "probit", "--lambda0", "1,10", "--lambda1", "1", "--train-size", "100", "--seed", "4",
        "--out", p(&g),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(g.join("grid.csv")).unwrap().lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(g.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 4);

    let b = t.path().join("b");
    let out = cpr(&["--threads", "1", "benchmark", "--ks", "2", "--repetitions", "2", "--methods", "probit,oracle", "--out", p(&b)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(b.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains(",20,"));
    assert!(b.join("report.json").exists() && b.join("repetitions.csv").exists());
    let out = cpr(&["benchmark", "--methods", "lasso", "--out", p(&b)]);
    assert_eq!(out.status.code(), Some(2));
}
