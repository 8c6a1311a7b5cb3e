use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn scorematch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorematch")).args(args).env_remove("SCOREMATCH_THREADS").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = scorematch(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate_chain(dir: &Path, m: &str, n: &str, seed: &str) {
    ok(&["simulate", "--design", "chain", "--m", m, "--n", n, "--seed", seed, "--out", p(dir)]);
}

#[test]
fn simulate_writes_shape_truth_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_chain(tmp.path(), "64", "400", "7");
    let data = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    let rows: Vec<&str> = data.lines().collect();
    assert_eq!(rows.len(), 400);
    assert!(rows.iter().all(|r| r.split(',').count() == 64));
    let truth = json(&tmp.path().join("truth.json"));
    assert_eq!(truth["graph"]["edges"].as_array().unwrap().len(), 63);
    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["m"], 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate_chain(a.path(), "20", "50", "3");
    simulate_chain(b.path(), "20", "50", "3");
    for f in ["data.csv", "truth.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let c = tempfile::tempdir().unwrap();
    simulate_chain(c.path(), "20", "50", "4");
    assert_ne!(fs::read(a.path().join("data.csv")).unwrap(), fs::read(c.path().join("data.csv")).unwrap());
}

#[test]
fn truncated_blocks_are_nonnegative() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--design", "truncated-blocks", "--blocks", "10", "--block-size", "10", "--n", "2500", "--seed", "1", "--out", p(tmp.path())]);
    let data = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 2500);
    assert!(data.lines().flat_map(|l| l.split(',')).all(|v| v.parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn every_design_simulates() {
    let tmp = tempfile::tempdir().unwrap();
    let designs: &[&[&str]] = &[
        &["lattice", "--side", "4"],
        &["star", "--m", "30", "--d", "10"],
        &["peng", "--components", "2", "--side", "5", "--hubs", "1", "--hub-degree", "6"],
        &["discrete", "--m", "40"],
        &["contaminated", "--m", "40"],
        &["mvt", "--m", "40", "--p", "0.1"],
        &["normal-conditionals", "--side", "3"],
        &["meinshausen", "--rho", "0.3"],
    ];
    for d in designs {
        let out = tmp.path().join(d[0]);
        let mut args = vec!["simulate", "--design"];
        args.extend_from_slice(d);
        args.extend_from_slice(&["--n", "30", "--out", p(&out)]);
        ok(&args);
        assert!(out.join("data.csv").exists() && out.join("truth.json").exists() && out.join("manifest.json").exists());
    }
}

#[test]
fn unknown_design_and_bad_values_exit_2() {
    assert_eq!(scorematch(&["simulate", "--design", "nope", "--n", "5"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = scorematch(&["simulate", "--design", "star", "--m", "5", "--d", "9", "--n", "5", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(scorematch(&["fit"]).status.code(), Some(2));
}

#[test]
fn path_endpoint_equals_inverse_second_moment() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_chain(tmp.path(), "10", "50", "11");
    let fit = tmp.path().join("fit");
    ok(&["fit", "--data", p(&tmp.path().join("data.csv")), "--family", "gaussian", "--solver", "path", "--verify", "--out", p(&fit)]);
    let report = json(&fit.join("verify.json"));
    assert_eq!(report["pass"], true);
    let endpoint = report["checks"].as_array().unwrap().iter().find(|c| c["name"] == "endpoint_minus_inverse_w").unwrap();
    assert!(endpoint["value"].as_f64().unwrap() <= 1e-8);
    let path = json(&fit.join("path.json"));
    assert_eq!(path["kind"], "path");
    let kkt = path["path"]["kkt_residual"].as_array().unwrap();
    assert_eq!(kkt.len(), path["path"]["knots"].as_array().unwrap().len());

    // the standalone verifier agrees
    let v = tmp.path().join("verify");
    ok(&["verify", "--data", p(&tmp.path().join("data.csv")), "--fit", p(&fit.join("path.json")), "--out", p(&v)]);
    assert_eq!(json(&v.join("verify.json"))["pass"], true);
}

#[test]
fn huge_lambda_gives_empty_support() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_chain(tmp.path(), "12", "100", "2");
    ok(&["fit", "--data", p(&tmp.path().join("data.csv")), "--solver", "cd", "--lambda", "1e9", "--out", p(tmp.path())]);
    let est = json(&tmp.path().join("estimate.json"));
    assert_eq!(est["kind"], "estimate");
    assert!(est["estimates"][0]["edges"].as_array().unwrap().is_empty());
    assert!(est["estimates"][0]["kkt_residual"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn group_penalty_reports_pair_norms() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--design", "normal-conditionals", "--side", "3", "--n", "300", "--out", p(tmp.path())]);
    ok(&[
        "fit", "--data", p(&tmp.path().join("data.csv")), "--family", "normal-conditionals", "--penalty", "group",
        "--solver", "cd", "--lambda", "0.01", "--out", p(tmp.path()),
    ]);
    let est = json(&tmp.path().join("estimate.json"));
    let rec = &est["estimates"][0];
    let norms = rec["group_norms"].as_array().unwrap();
    assert!(!norms.is_empty());
    assert_eq!(norms.len(), rec["edges"].as_array().unwrap().len());
    assert!(norms.iter().all(|g| g["norm"].as_f64().unwrap() > 0.0 && g["j"].as_u64() < g["k"].as_u64()));
    // the group penalty has no path solver
    let out = scorematch(&["fit", "--data", p(&tmp.path().join("data.csv")), "--penalty", "group", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn truncated_family_rejects_negative_data() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_chain(tmp.path(), "5", "40", "1");
    let out = scorematch(&["fit", "--data", p(&tmp.path().join("data.csv")), "--family", "truncated-gaussian", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("non-negative"), "{msg}");
}

#[test]
fn tune_defaults_and_single_candidate() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_chain(tmp.path(), "10", "200", "5");
    let data = tmp.path().join("data.csv");
    let t1 = tmp.path().join("t1");
    ok(&["tune", "--data", p(&data), "--out", p(&t1)]);
    assert_eq!(json(&t1.join("manifest.json"))["config"]["gamma"], 0.5);
    assert!(t1.join("ebic.csv").exists());

    let t2 = tmp.path().join("t2");
    ok(&["tune", "--data", p(&data), "--lambdas", "0.25", "--out", p(&t2)]);
    assert_eq!(json(&t2.join("selection.json"))["selected_lambda"], 0.25);
}

#[test]
fn refit_changes_scores_not_candidates() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_chain(tmp.path(), "8", "150", "9");
    let data = tmp.path().join("data.csv");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["tune", "--data", p(&data), "--out", p(&a)]);
    ok(&["tune", "--data", p(&data), "--refit", "--out", p(&b)]);
    let rows = |d: &Path| json(&d.join("selection.json"))["report"]["rows"].as_array().unwrap().clone();
    let (ra, rb) = (rows(&a), rows(&b));
    let lambdas = |r: &[Value]| r.iter().map(|x| x["lambda"].as_f64().unwrap()).collect::<Vec<_>>();
    assert_eq!(lambdas(&ra), lambdas(&rb));
    assert!(ra.iter().zip(&rb).any(|(x, y)| x["score"] != y["score"]));
}

#[test]
fn diagnose_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--design", "meinshausen", "--rho", "0.2", "--n", "100", "--out", p(tmp.path())]);
    let d = tmp.path().join("diag");
    ok(&["diagnose", "--truth", p(&tmp.path().join("truth.json")), "--out", p(&d)]);
    let alpha = json(&d.join("theory.json"))["alpha"].as_f64().unwrap();
    assert!((alpha - (1.0 - 2.0 * 0.2 * 1.2)).abs() < 1e-10);

    simulate_chain(tmp.path(), "10", "300", "8");
    let fit = tmp.path().join("fit");
    ok(&["fit", "--data", p(&tmp.path().join("data.csv")), "--out", p(&fit)]);
    let e = tmp.path().join("eval");
    ok(&["eval", "--truth", p(&tmp.path().join("truth.json")), "--fit", p(&fit.join("path.json")), "--out", p(&e)]);
    let auc = json(&e.join("eval.json"))["auc"].as_f64().unwrap();
    assert!(auc > 0.8 && auc <= 1.0, "{auc}");
    let roc = fs::read_to_string(e.join("roc.csv")).unwrap();
    assert!(roc.starts_with("lambda,fpr,tpr"));

    let c = tmp.path().join("cmp");
    ok(&[
        "eval", "--truth", p(&tmp.path().join("truth.json")), "--data", p(&tmp.path().join("data.csv")),
        "--families", "gaussian,gaussian-centered", "--out", p(&c),
    ]);
    let aucs = json(&c.join("auc.json"));
    assert!(aucs["gaussian"].as_f64().is_some() && aucs["gaussian-centered"].as_f64().is_some());
}

#[test]
fn non_gaussian_diagnose_needs_monte_carlo() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--design", "normal-conditionals", "--side", "2", "--n", "10", "--out", p(tmp.path())]);
    let truth = tmp.path().join("truth.json");
    assert_eq!(scorematch(&["diagnose", "--truth", p(&truth), "--out", p(tmp.path())]).status.code(), Some(2));
    ok(&["diagnose", "--truth", p(&truth), "--mc-samples", "2000", "--mc-batches", "4", "--out", p(tmp.path())]);
    let report = json(&tmp.path().join("theory.json"));
    assert_eq!(report["monte_carlo"], true);
    assert!(report["max_std_error"].as_f64().unwrap() > 0.0);
}

const CHAIN_CONFIG: &str = r#"
design = "vary_m_chain"
trials = 20
lambda_constant = 2.5
seed = 3
grid = [
  { value = 20, n = [60, 120, 240] },
  { value = 30, n = [60, 120, 240] },
]
"#;

#[test]
fn experiment_smoke_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("chain.toml");
    fs::write(&cfg, CHAIN_CONFIG).unwrap();
    let start = Instant::now();
    ok(&["experiment", "--config", p(&cfg), "--trials", "1", "--threads", "2", "--out", p(tmp.path())]);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    let csv = fs::read_to_string(tmp.path().join("recovery.csv")).unwrap();
    assert!(csv.starts_with("grid,n,rescaled_n,success,lambda,trials,failures"));
    assert_eq!(csv.lines().count(), 7);
    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["config"]["trials"], 1);
    assert_eq!(manifest["seed"], 3);
    let align = json(&tmp.path().join("alignment.json"));
    assert!(align["raw"].is_number() && align["rescaled"].is_number());
}

#[test]
fn experiment_is_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("chain.json");
    let value: toml::Value = toml::from_str(CHAIN_CONFIG).unwrap();
    fs::write(&cfg, serde_json::to_string(&value).unwrap()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["experiment", "--config", p(&cfg), "--threads", "1", "--out", p(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_scorematch"))
        .args(["experiment", "--config", p(&cfg), "--out", p(&b)])
        .env("SCOREMATCH_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("recovery.csv")).unwrap(), fs::read(b.join("recovery.csv")).unwrap());
}

#[test]
fn experiment_missing_field_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, CHAIN_CONFIG.replace("trials = 20\n", "")).unwrap();
    let out = scorematch(&["experiment", "--config", p(&cfg), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));
    assert!(!tmp.path().join("manifest.json").exists());
}

#[test]
fn missing_input_is_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = scorematch(&["fit", "--data", p(&tmp.path().join("absent.csv")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}
