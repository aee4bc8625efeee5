use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cpsize::estimate::point_estimate_unknown;
use cpsize::scorer::trapezoid_weights;
use cpsize::{Execution, ScoreMatrix};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cpsize"));
    cmd.env_remove("SIZE_CLI_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing in {v}"))
}

#[test]
fn estimate_hand_case() {
    let dir = TempDir::new().unwrap();
    let scores = write(&dir, "s.csv", "score\n1\n2\n3\n");
    let out = run(&["estimate", "--scores", p(&scores), "--n", "3", "--alpha", "0.5", "--factor", "l1"]);
    assert!(out.status.success());
    let doc = json(&out);
    assert_eq!(doc["schema_version"], 1);
    assert!((num(&doc, "point") - 4.0).abs() <= 1e-12);
    assert_eq!(doc["n_alpha"], 1);
    assert_eq!(doc["k"], 3);
    assert!(doc["lower"].is_null() && doc["upper"].is_null());
}

#[test]
fn estimate_with_gamma_fills_the_interval() {
    let dir = TempDir::new().unwrap();
    let scores = write(&dir, "s.csv", "1\n2\n3\n");
    let out = run(&[
        "estimate", "--scores", p(&scores), "--n", "3", "--alpha", "0.5", "--factor", "l1", "--gamma", "0.1",
    ]);
    assert!(out.status.success());
    let doc = json(&out);
    assert!(num(&doc, "lower") <= num(&doc, "point") && num(&doc, "point") <= num(&doc, "upper"));
    assert_eq!(num(&doc, "gamma"), 0.1);
    assert_eq!(num(&doc, "truncation"), 3.0);
    assert!((num(&doc, "delta") - (20f64.ln() / 6.0).sqrt()).abs() <= 1e-12);
}

#[test]
fn estimate_usage_and_data_errors() {
    let dir = TempDir::new().unwrap();
    let scores = write(&dir, "s.csv", "1\n2\n3\n");
    let base = ["estimate", "--scores", p(&scores), "--n", "3", "--alpha", "0.5", "--factor"];
    let code = |extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(extra);
        run(&args).status.code().unwrap()
    };
    assert_eq!(code(&["lp-two"]), 2);
    assert_eq!(code(&["unknown"]), 2);
    assert_eq!(code(&["l1", "--gamma", "1.5"]), 2);
    assert_eq!(run(&["estimate", "--n", "3"]).status.code(), Some(2));

    let bad = write(&dir, "bad.csv", "1\nnot-a-number\n");
    let out = run(&["estimate", "--scores", p(&bad), "--n", "3", "--alpha", "0.5", "--factor", "l1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2"));

    let negative = write(&dir, "neg.csv", "1\n-2\n");
    let out = run(&["estimate", "--scores", p(&negative), "--n", "3", "--alpha", "0.5", "--factor", "l1"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn infinite_regime_is_reported() {
    let dir = TempDir::new().unwrap();
    let scores = write(&dir, "s.csv", "1\n2\n3\n");
    let out = run(&["estimate", "--scores", p(&scores), "--n", "1", "--alpha", "0.4", "--factor", "l1"]);
    assert_eq!(out.status.code(), Some(4));
    let doc = json(&out);
    assert_eq!(doc["infinite"], true);
    assert!(doc["point"].is_null());
}

#[test]
fn estimate_matrix_counting_matches_library() {
    let dir = TempDir::new().unwrap();
    // Three labels, four accessible points; scores are residuals |y_j - M(x_i)|.
    let rows = [[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0], [0.5, 0.5, 1.5]];
    let marginal = [0.0, 1.0, 0.0, 0.5];
    let mut body = String::from("0,1,2\n");
    for r in &rows {
        body.push_str(&format!("{},{},{}\n", r[0], r[1], r[2]));
    }
    let matrix = write(&dir, "m.csv", &body);
    let marg = write(&dir, "y.csv", "score\n0\n1\n0\n0.5\n");
    let out = run(&["estimate-matrix", "--matrix", p(&matrix), "--marginal", p(&marg), "--n", "5", "--alpha", "0.2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    let lib = ScoreMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect(), vec![1.0; 3], marginal.to_vec())
        .unwrap();
    let expect = point_estimate_unknown(&lib, 5, 0.2, Execution::Sequential).unwrap().point;
    assert!((num(&doc, "point") - expect).abs() <= 1e-12);
    assert_eq!(doc["estimator"], "unknown-factor");
}

#[test]
fn estimate_matrix_trapezoid_on_uniform_grid() {
    let dir = TempDir::new().unwrap();
    let grid: Vec<f64> = (0..=40).map(|j| j as f64 * 0.1).collect();
    let centers = [1.5, 2.0, 2.5, 1.8, 2.2];
    let true_y = [1.9, 1.6, 2.4, 2.3, 2.1];
    let mut body = grid.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",") + "\n";
    let mut rows = Vec::new();
    for c in centers {
        let row: Vec<f64> = grid.iter().map(|g| (g - c).abs()).collect();
        body += &(row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n");
        rows.push(row);
    }
    let marginal: Vec<f64> = centers.iter().zip(true_y).map(|(c, y)| (y - c).abs()).collect();
    let matrix = write(&dir, "m.csv", &body);
    let marg = write(&dir, "y.csv", &(marginal.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n") + "\n"));
    let out = run(&[
        "estimate-matrix", "--matrix", p(&matrix), "--marginal", p(&marg), "--n", "9", "--alpha", "0.3",
        "--label-measure", "trapezoid", "--gamma", "0.2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json(&out);
    let lib = ScoreMatrix::from_rows(rows, trapezoid_weights(&grid).unwrap(), marginal).unwrap();
    let expect = point_estimate_unknown(&lib, 9, 0.3, Execution::Sequential).unwrap().point;
    assert!((num(&doc, "point") - expect).abs() <= 1e-12);
    assert_eq!(doc["heuristic"], true);
    assert!(num(&doc, "lower") <= num(&doc, "point") && num(&doc, "point") <= num(&doc, "upper"));
}

#[test]
fn estimate_matrix_missing_marginal_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let matrix = write(&dir, "m.csv", "0,1\n0,1\n1,0\n");
    let missing = dir.path().join("nope.csv");
    let out = run(&["estimate-matrix", "--matrix", p(&matrix), "--marginal", p(&missing), "--n", "5", "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["estimate-matrix", "--matrix", p(&matrix), "--n", "5", "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn conditional_fixtures() {
    let dir = TempDir::new().unwrap();
    let scores = write(&dir, "s.csv", "1\n2\n3\n");
    let cases = [
        // tilde = 0, 1/3, 2/3 at the three labels: 1 + 20/27 + 7/27.
        ("score\n1\n2\n3\n", 2.0),
        // Weighted: 2 * 1 + 0.5 * 20/27.
        ("score,weight\n1,2\n2,0.5\n", 2.0 + 0.5 * 20.0 / 27.0),
        // Scores above every accessible score have tilde 1 and contribute nothing.
        ("0.5\n7\n9\n", 1.0),
    ];
    for (i, (body, expect)) in cases.iter().enumerate() {
        let row = write(&dir, &format!("row{i}.csv"), body);
        let out = run(&["conditional", "--scores", p(&scores), "--row", p(&row), "--n", "3", "--alpha", "0.5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let doc = json(&out);
        assert!((num(&doc, "point") - expect).abs() <= 1e-12, "case {i}: {doc}");
        assert_eq!(doc["estimator"], "feature-conditional");
    }
}

#[test]
fn synthetic_is_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let args = ["synthetic", "--a", "0.25,4", "--b", "1", "--m", "10", "--n", "10,100", "--repeats", "2", "--seed", "7"];
    let first = run(&args);
    assert!(first.status.success());
    let second = bin().args(args).args(["--threads", "3"]).output().unwrap();
    let third = bin().args(args).env("SIZE_CLI_THREADS", "1").output().unwrap();
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(first.stdout, third.stdout);
    let file = dir.path().join("grid.csv");
    assert!(bin().args(args).args(["--output", p(&file)]).output().unwrap().status.success());
    assert_eq!(fs::read(&file).unwrap(), first.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.starts_with("a,b,m,n,alpha,gamma,repeat,theoretical,mc_avg,point,lower,upper,contains_truth\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert!(String::from_utf8_lossy(&first.stderr).contains("seed: 7"));
}

#[test]
fn synthetic_default_grid_containment() {
    let out = run(&["synthetic", "--seed", "2024", "--gamma", "0.1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let flags: Vec<bool> = text.lines().skip(1).map(|l| l.ends_with("true")).collect();
    assert_eq!(flags.len(), 5 * 5 * 2 * 3 * 10);
    let rate = flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64;
    assert!(rate >= 0.9, "containment {rate}");
}

#[test]
fn synthetic_single_cell_is_fast() {
    let start = std::time::Instant::now();
    let out = run(&["synthetic", "--a", "1", "--b", "1", "--m", "100", "--n", "1000", "--repeats", "1", "--seed", "1"]);
    assert!(out.status.success());
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn mc_degenerate_and_synthetic_models() {
    let out = run(&["mc", "--model", "constant:1.5", "--n", "10", "--alpha", "0.1", "--runs", "50", "--seed", "1"]);
    assert!(out.status.success());
    let doc = json(&out);
    assert_eq!(num(&doc, "mean"), 3.0);
    assert_eq!(num(&doc, "std_dev"), 0.0);
    assert_eq!(num(&doc, "theoretical"), 3.0);

    let out = run(&["mc", "--model", "synthetic:10:1:4", "--n", "20", "--alpha", "0.1", "--runs", "2000", "--seed", "5"]);
    assert!(out.status.success());
    let doc = json(&out);
    assert!(num(&doc, "studentized").abs() <= 3.0, "{doc}");
    let methods: Vec<&str> = doc["intervals"].as_array().unwrap().iter().map(|i| i["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["clt", "hoeffding", "empirical-bernstein"]);
    assert_eq!(num(&doc, "bound"), 20.0);

    let out = run(&["mc", "--model", "uniform:0:1", "--factor", "zero-one:3", "--n", "10", "--alpha", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["mc", "--model", "gaussian:0:1", "--n", "10", "--alpha", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn coverage_within_band() {
    let out = run(&["coverage", "--model", "uniform:0:1", "--n", "99", "--alpha", "0.1", "--seed", "3"]);
    assert!(out.status.success());
    let doc = json(&out);
    let rate = num(&doc, "miscoverage");
    assert!((0.08..=0.11).contains(&rate), "{rate}");
    assert_eq!(doc["within_band"], true);
}

#[test]
fn omitted_seed_is_chosen_and_reported() {
    let args = ["coverage", "--model", "exponential:2", "--n", "19", "--alpha", "0.2", "--trials", "200"];
    let doc = json(&run(&args));
    let seed = doc["seed"].as_u64().expect("seed reported");
    let again = json(&bin().args(args).args(["--seed", &seed.to_string()]).output().unwrap());
    assert_eq!(doc["miscoverage"], again["miscoverage"]);
}

#[test]
fn thread_setting_is_validated() {
    let out = bin()
        .args(["coverage", "--model", "uniform:0:1", "--n", "9", "--alpha", "0.1", "--trials", "10"])
        .env("SIZE_CLI_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
