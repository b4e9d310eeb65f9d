use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use tracemix::recovery::RecoveryResult;
use tracemix::{tv_distance, SparseDistribution};
use tracemix_cli::report::{emit_report, CSV_HEADER};

const PAIR: &str = r#"{"n": 8, "support": ["01101100", "11010010"], "weights": [0.6, 0.4]}"#;

fn tracemix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tracemix"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn setup(dist: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dist.json");
    fs::write(&path, dist).unwrap();
    (dir, path)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_result(path: &Path) -> RecoveryResult {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_header_traces_and_manifest() {
    let (dir, _) = setup(PAIR);
    let out = tracemix(dir.path(), &["simulate", "--dist", "dist.json", "--p", "0.9", "--samples", "500", "--seed", "4", "--out", "t.txt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("t.txt")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("#n=8 p=0.9 seed=4"));
    let traces: Vec<&str> = lines.collect();
    assert_eq!(traces.len(), 500);
    assert!(traces.iter().all(|t| t.len() == 8 && t.bytes().all(|b| b == b'0' || b == b'1')));

    let manifest = json(&dir.path().join("t.txt.manifest.json"));
    assert_eq!(manifest["mode"], "simulate");
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["settings"]["samples"], "500");
    assert_eq!(manifest["outputs"][0], "t.txt");
}

#[test]
fn simulate_is_deterministic() {
    let (dir, _) = setup(PAIR);
    for name in ["a.txt", "b.txt"] {
        let out = tracemix(dir.path(), &["simulate", "--dist", "dist.json", "--p", "0.7", "--samples", "3000", "--out", name]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(
        fs::read(dir.path().join("a.txt")).unwrap(),
        fs::read(dir.path().join("b.txt")).unwrap()
    );
}

#[test]
fn oracle_check_reports_small_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let out = tracemix(dir.path(), &["oracle-check", "--n", "8", "--m", "3", "--out", "oracle.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("oracle.json"));
    assert_eq!(report["cases"], 256 * 3 * 3 * 5);
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-8);
    assert_eq!(report["passed"], true);
    assert!(dir.path().join("oracle.json.manifest.json").exists());
}

#[test]
fn recover_statistical_fixture() {
    let (dir, dist) = setup(PAIR);
    let args = [
        "recover", "--dist", "dist.json", "--p", "0.9", "--samples", "400000", "--seed", "11",
        "--set", "grid=circle", "--out", "result.json",
    ];
    let out = tracemix(dir.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("tv_to_truth"));

    let result = read_result(&dir.path().join("result.json"));
    let truth: SparseDistribution = serde_json::from_str(&fs::read_to_string(dist).unwrap()).unwrap();
    assert!(tv_distance(&result.distribution, &truth).unwrap() <= 0.1);

    let mut csv = csv::Reader::from_path(dir.path().join("result.csv")).unwrap();
    assert_eq!(csv.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER.to_vec());
    let rows = csv.records().count();
    let points = &result.diagnostics.points;
    assert!(!points.is_empty());
    assert_eq!(rows, points.len() * (2 * result.params.ell()));

    let manifest = json(&dir.path().join("result.json.manifest.json"));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["resolved"]["sample_count"], 400000);
}

#[test]
fn recover_from_trace_file_replays_from_manifest() {
    let (dir, _) = setup(PAIR);
    let sim = tracemix(dir.path(), &["simulate", "--dist", "dist.json", "--p", "0.9", "--samples", "300000", "--out", "t.txt"]);
    assert_eq!(code(&sim), 0);
    let first = tracemix(
        dir.path(),
        &["recover", "--traces", "t.txt", "--set", "grid=circle", "--workers", "1", "--out", "one.json"],
    );
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let replay = tracemix(
        dir.path(),
        &["recover", "--config", "one.json.manifest.json", "--workers", "3", "--out", "two.json"],
    );
    assert_eq!(code(&replay), 0, "{}", String::from_utf8_lossy(&replay.stderr));
    let a = read_result(&dir.path().join("one.json"));
    let b = read_result(&dir.path().join("two.json"));
    assert_eq!(a, b);
    assert_eq!(a.distribution.len(), 2);
    assert_eq!(a.diagnostics.traces_used, 300000);
}

#[test]
fn flags_override_config_file() {
    let (dir, _) = setup(PAIR);
    fs::write(dir.path().join("run.cfg"), "# fixture\np = 0.8\nseed = 5\nsamples = 100\n").unwrap();
    let out = tracemix(dir.path(), &["simulate", "--config", "run.cfg", "--dist", "dist.json", "--seed", "7", "--out", "t.txt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = json(&dir.path().join("t.txt.manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["settings"]["p"], "0.8");
    assert!(fs::read_to_string(dir.path().join("t.txt")).unwrap().starts_with("#n=8 p=0.8 seed=7"));
}

#[test]
fn estimate_writes_one_record_per_point_and_order() {
    let (dir, _) = setup(PAIR);
    let out = tracemix(
        dir.path(),
        &["estimate", "--dist", "dist.json", "--p", "0.9", "--samples", "20000", "--grid-points", "9", "--out", "m.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let file = json(&dir.path().join("m.json"));
    let points = file["grid"]["points"].as_array().unwrap().len();
    assert_eq!(points, 9);
    assert_eq!(file["records"].as_array().unwrap().len(), points * 4);
    assert_eq!(file["sample_count"], 20000);
}

#[test]
fn distinguish_finds_pair() {
    let (dir, dist) = setup(PAIR);
    let out = tracemix(
        dir.path(),
        &[
            "distinguish", "--dist", "dist.json", "--p", "0.9", "--samples", "400000", "--eps", "0.25",
            "--set", "grid=circle", "--grid-points", "33", "--out", "d.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let file = json(&dir.path().join("d.json"));
    let found: SparseDistribution = serde_json::from_value(file["distribution"].clone()).unwrap();
    let truth: SparseDistribution = serde_json::from_str(&fs::read_to_string(dist).unwrap()).unwrap();
    assert!(tv_distance(&found, &truth).unwrap() <= 0.25);
}

#[test]
fn parameter_errors_exit_two() {
    let (dir, _) = setup(PAIR);
    let cases: &[&[&str]] = &[
        &["recover", "--n", "8", "--out", "x.json"],
        &["simulate", "--p", "0.9", "--out", "x.txt"],
        &["recover", "--dist", "dist.json", "--p", "1.5", "--out", "x.json"],
        &["recover", "--dist", "dist.json", "--p", "0.9", "--set", "colour=red", "--out", "x.json"],
        &["distinguish", "--n", "9", "--p", "0.9"],
        &["oracle-check", "--n", "40"],
        &["no-such-mode"],
    ];
    for args in cases {
        let out = tracemix(dir.path(), args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn corrupt_inputs_exit_two() {
    let (dir, _) = setup(PAIR);
    fs::write(dir.path().join("bad.txt"), "#n=4 p=0.9 seed=0\n0101\n01x1\n").unwrap();
    fs::write(dir.path().join("bad.json"), "{\"n\": 3, \"support\": [\"0101\"], \"weights\": [1.0]}").unwrap();
    for args in [
        ["recover", "--traces", "bad.txt", "--out", "x.json"],
        ["recover", "--dist", "bad.json", "--out", "x.json"],
    ] {
        assert_eq!(code(&tracemix(dir.path(), &args)), 2, "{args:?}");
    }
}

#[test]
fn small_retention_from_trace_file_is_refused() {
    let (dir, _) = setup(PAIR);
    let sim = tracemix(dir.path(), &["simulate", "--dist", "dist.json", "--p", "0.1", "--samples", "100", "--out", "t.txt"]);
    assert_eq!(code(&sim), 0);
    let out = tracemix(dir.path(), &["recover", "--traces", "t.txt", "--out", "x.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("retained"));
}

#[test]
fn io_errors_exit_four() {
    let (dir, _) = setup(PAIR);
    let out = tracemix(dir.path(), &["recover", "--traces", "missing.txt", "--out", "x.json"]);
    assert_eq!(code(&out), 4);
    let out = tracemix(
        dir.path(),
        &["simulate", "--dist", "dist.json", "--p", "0.9", "--samples", "10", "--out", "no/such/dir/t.txt"],
    );
    assert_eq!(code(&out), 4);
}

#[test]
fn failed_searches_exit_three() {
    let (dir, _) = setup(PAIR);
    let out = tracemix(
        dir.path(),
        &[
            "distinguish", "--dist", "dist.json", "--p", "0.9", "--samples", "2000", "--set", "margin_abs=0",
            "--set", "margin_sigmas=0", "--set", "weight_grid=0.5",
        ],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn empty_diagnostics_give_header_only_csv() {
    let (dir, _) = setup(r#"{"n": 4, "support": ["1011"], "weights": [1.0]}"#);
    let out = tracemix(
        dir.path(),
        &["recover", "--dist", "dist.json", "--p", "0.9", "--ell", "1", "--samples", "20000", "--out", "r.json"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut result = read_result(&dir.path().join("r.json"));
    result.diagnostics.points.clear();
    result.diagnostics.candidates.clear();
    let path = dir.path().join("empty.json");
    emit_report(&result, &path).unwrap();
    assert_eq!(read_result(&path), result);
    let csv = fs::read_to_string(dir.path().join("empty.csv")).unwrap();
    assert_eq!(csv.trim_end(), CSV_HEADER.join(","));
}

#[test]
fn report_into_missing_directory_is_io_error() {
    let (dir, _) = setup(r#"{"n": 4, "support": ["1011"], "weights": [1.0]}"#);
    let out = tracemix(
        dir.path(),
        &["recover", "--dist", "dist.json", "--p", "0.9", "--ell", "1", "--samples", "5000", "--out", "r.json"],
    );
    assert_eq!(code(&out), 0);
    let result = read_result(&dir.path().join("r.json"));
    let err = emit_report(&result, &dir.path().join("gone").join("r.json")).unwrap_err();
    assert_eq!(err.exit_code(), tracemix_cli::EXIT_IO);
}
