use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fpp_lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fpp-lab"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    fpp_lab()
        .arg("run")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

const SIMULATE: &str = r#"{
    "experiment": "simulate",
    "kernel": {"kind": "exp_shot_noise", "a": 0.5},
    "intensity": {"kind": "constant", "base_rate": 3.0},
    "marks": {"kind": "lognormal", "mu": 0.0, "sigma": 0.5},
    "horizon": 10.0,
    "grid": {"start": 0.05, "stop": 10.0, "count": 200},
    "replicas": 5,
    "seed": 42
}"#;

#[test]
fn simulate_is_byte_for_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "sim.json", SIMULATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run(&config, &a, &[]);
    let second = run(&config, &b, &[]);
    assert_eq!(first.status.code(), Some(0), "{first:?}");
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    let files = artifacts(&a);
    assert_eq!(
        files.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        ["filtered.csv", "paths.csv", "report.json"]
    );
    assert_eq!(files, artifacts(&b));
    assert!(String::from_utf8_lossy(&first.stdout).starts_with("PASS simulate:"));
}

#[test]
fn seed_override_changes_output_and_is_echoed() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "sim.json", SIMULATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&config, &a, &[]).status.success());
    assert!(run(&config, &b, &["--seed", "43"]).status.success());
    let paths = fs::read_to_string(b.join("paths.csv")).unwrap();
    assert!(paths.lines().next().unwrap().contains("\"seed\":43"));
    assert_ne!(fs::read(a.join("paths.csv")).unwrap(), paths.into_bytes());
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "sim.json", SIMULATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let one = fpp_lab()
        .env("FPP_LAB_THREADS", "1")
        .args(["run", config.to_str().unwrap(), "--out", a.to_str().unwrap()])
        .output()
        .unwrap()
        .status;
    let four = fpp_lab()
        .env("FPP_LAB_THREADS", "4")
        .args(["run", config.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .output()
        .unwrap()
        .status;
    assert!(one.success() && four.success());
    assert_eq!(artifacts(&a), artifacts(&b));

    let bad = fpp_lab()
        .env("FPP_LAB_THREADS", "many")
        .args(["run", config.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn indicator_girsanov_is_rejected_with_a_record() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "girsanov.json",
        r#"{
        "experiment": "verify-girsanov",
        "kernel": {"kind": "indicator"},
        "intensity": {"kind": "constant", "base_rate": 1.0},
        "marks": {"kind": "unit"},
        "horizon": 5.0,
        "h_spec": {"scale": 0.3, "phi_source": "closed_form"},
        "replicas": 1000,
        "seed": 7
    }"#,
    );
    let out = run(&config, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"]["kind"], "precondition");
    assert!(record["error"]["message"].as_str().unwrap().contains("K(t,t) = 0"));
}

#[test]
fn fractional_consistency_passes() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "consistency.json",
        r#"{
        "experiment": "consistency",
        "kernel": {"kind": "fractional", "hurst": 0.7},
        "intensity": {"kind": "constant", "base_rate": 1.0},
        "marks": {"kind": "unit"},
        "horizon": 1000.0,
        "theta_true": 1.0,
        "horizons": [50.0, 200.0, 1000.0],
        "replicas": 200,
        "seed": 2024
    }"#,
    );
    let dir = tmp.path().join("out");
    let out = run(&config, &dir, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["report"]["horizons"].as_array().unwrap().len(), 3);
    assert_eq!(report["config"]["rmse_threshold"], 0.2);
    let csv = fs::read_to_string(dir.join("estimates.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 200 * 3);
}

#[test]
fn failed_statistical_check_exits_3() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "strict.json",
        r#"{
        "experiment": "consistency",
        "kernel": {"kind": "indicator"},
        "intensity": {"kind": "constant", "base_rate": 1.0},
        "marks": {"kind": "unit"},
        "horizon": 100.0,
        "theta_true": 1.0,
        "replicas": 50,
        "rmse_threshold": 1e-6,
        "seed": 3
    }"#,
    );
    let out = run(&config, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL consistency:"));
}

#[test]
fn coarse_volterra_grid_is_a_numerical_failure() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "phi.json",
        r#"{
        "experiment": "solve-phi",
        "kernel": {"kind": "fractional", "hurst": 0.7},
        "intensity": {"kind": "constant", "base_rate": 1.0},
        "marks": {"kind": "unit"},
        "horizon": 5.0,
        "grid": {"start": 0.01, "stop": 5.0, "count": 60},
        "seed": 0
    }"#,
    );
    let out = run(&config, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"]["kind"], "residual_check");
    assert_eq!(record["error"]["exit_code"], 2);
}

#[test]
fn validate_accepts_good_and_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let good = write_config(tmp.path(), "good.json", SIMULATE);
    let status = fpp_lab().arg("validate").arg(&good).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(!tmp.path().join("fpp-lab-out").exists());

    let bad = write_config(tmp.path(), "bad.json", &SIMULATE.replace("\"seed\"", "\"sede\": 1, \"seed\""));
    let out = fpp_lab().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"]["kind"], "json");

    let missing = fpp_lab().arg("validate").arg(tmp.path().join("nope.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    let out = fpp_lab().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(fpp_lab().arg("--help").output().unwrap().status.success());
}
