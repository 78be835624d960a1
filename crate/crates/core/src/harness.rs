//! Runs a configured experiment end to end: validation, dispatch, artifacts
//! and the pass/fail verdict with its exit code.
//!
//! Every artifact embeds the resolved config. CSV files carry it on a
//! leading `# config=` comment line, JSON reports under a `config` key.
//! Nothing time- or machine-dependent is written, so equal configs give
//! byte-identical artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, Prepared};
use crate::error::{Error, ErrorClass, Result};
use crate::estimator::{consistency_experiment, consistency_setup_from_prepared, mle_solve, trajectory};
use crate::filtered::{compensator_on_grid, filtered_on_grid};
use crate::girsanov::{compare_laws, setup_from_prepared};
use crate::io::fmt_f64;
use crate::phi::{closed_form_phi, solve_phi_volterra_with, VolterraOptions};
use crate::point_process::{integrated_intensity, replica_seed, simulate, IntensitySpec, MarkedPath};
use crate::stats::rmse;

pub const THREADS_ENV: &str = "FPP_LAB_THREADS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_STATISTICAL: i32 = 3;

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub experiment: ExperimentKind,
    pub pass: bool,
    /// Headline numbers, without the verdict.
    pub headline: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_PASS
        } else {
            EXIT_STATISTICAL
        }
    }

    /// `PASS <headline>` or `FAIL <headline>`.
    pub fn summary_line(&self) -> String {
        format!("{} {}", if self.pass { "PASS" } else { "FAIL" }, self.headline)
    }
}

pub fn exit_code_for_error(err: &Error) -> i32 {
    match err.class() {
        ErrorClass::Validation => EXIT_VALIDATION,
        ErrorClass::Numerical => EXIT_NUMERICAL,
    }
}

/// Machine-readable record of a failed run.
pub fn error_record(err: &Error) -> serde_json::Value {
    json!({
        "error": {
            "kind": err.kind(),
            "class": match err.class() {
                ErrorClass::Validation => "validation",
                ErrorClass::Numerical => "numerical",
            },
            "message": err.to_string(),
            "exit_code": exit_code_for_error(err),
        }
    })
}

/// Replica thread pool sized by `FPP_LAB_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a nonnegative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// Reads a config file and applies command-line overrides. Returns the
/// config and the directory that anchors its relative paths.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::from_file(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

/// Checks a config file without running it.
pub fn validate_file(path: &Path) -> Result<Prepared> {
    let (config, base) = load_config(path, None)?;
    config.prepare(&base)
}

/// Runs the config at `path` on the `FPP_LAB_THREADS` pool. `out`
/// overrides the configured output directory.
pub fn run_file(path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutcome> {
    let (config, base) = load_config(path, seed)?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&config.output_path));
    let pool = thread_pool()?;
    pool.install(|| run(&config, &base, &out_dir))
}

/// Validates `config`, runs it and writes its artifacts into `out_dir`.
pub fn run(config: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<RunOutcome> {
    let prepared = config.prepare(base_dir)?;
    fs::create_dir_all(out_dir)?;
    let mut artifacts = Artifacts::new(out_dir, &prepared.config)?;
    let (pass, headline) = match prepared.config.experiment {
        ExperimentKind::Simulate => run_simulate(&prepared, &mut artifacts)?,
        ExperimentKind::Estimate => run_estimate(&prepared, &mut artifacts)?,
        ExperimentKind::Trajectory => run_trajectory(&prepared, &mut artifacts)?,
        ExperimentKind::VerifyGirsanov => run_verify_girsanov(&prepared, &mut artifacts)?,
        ExperimentKind::Consistency => run_consistency(&prepared, &mut artifacts)?,
        ExperimentKind::SolvePhi => run_solve_phi(&prepared, &mut artifacts)?,
    };
    Ok(RunOutcome {
        experiment: prepared.config.experiment,
        pass,
        headline,
        artifacts: artifacts.written,
    })
}

struct Artifacts {
    dir: PathBuf,
    config: ExperimentConfig,
    config_line: String,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path, config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            config: config.clone(),
            config_line: format!("# config={}\n", serde_json::to_string(config)?),
            written: Vec::new(),
        })
    }

    fn csv(&mut self, name: &str, header: &str, body: &str) -> Result<()> {
        let mut text = String::with_capacity(self.config_line.len() + header.len() + body.len() + 1);
        text.push_str(&self.config_line);
        text.push_str(header);
        text.push('\n');
        text.push_str(body);
        self.write(name, text)
    }

    fn json<T: Serialize>(&mut self, name: &str, pass: bool, report: &T) -> Result<()> {
        let document = json!({
            "experiment": self.config.experiment,
            "seed": self.config.seed,
            "pass": pass,
            "config": self.config,
            "report": report,
        });
        let mut text = serde_json::to_string_pretty(&document)?;
        text.push('\n');
        self.write(name, text)
    }

    fn write(&mut self, name: &str, text: String) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }
}

/// Grid points of the config inside `(0, horizon]`.
fn window_grid(prepared: &Prepared) -> Vec<f64> {
    let horizon = prepared.config.horizon;
    prepared.grid.iter().copied().filter(|&t| t <= horizon).collect()
}

fn simulate_replicas(prepared: &Prepared, intensity: &IntensitySpec) -> Result<Vec<MarkedPath>> {
    let config = &prepared.config;
    (0..config.replicas)
        .into_par_iter()
        .map(|r| simulate(intensity, &prepared.marks, config.horizon, replica_seed(config.seed, r)))
        .collect()
}

/// Intensity under `P_θ`: the base rate scaled by `1 + θφ`.
fn drifted_intensity(prepared: &Prepared) -> Result<(IntensitySpec, IntensitySpec, crate::phi::PhiFunction)> {
    let phi = prepared.phi(prepared.config.estimation_phi_source())?;
    let theta = prepared.config.theta_true.expect("validated");
    let reference = IntensitySpec::constant(prepared.base_rate())?;
    let truth = IntensitySpec::scaled_by_phi(prepared.base_rate(), theta, phi.clone())?;
    Ok((reference, truth, phi))
}

#[derive(Serialize)]
struct SimulateReport {
    replicas: usize,
    jump_counts: Vec<usize>,
    mean_jump_count: f64,
    expected_jump_count: f64,
    grid_points: usize,
}

fn run_simulate(prepared: &Prepared, artifacts: &mut Artifacts) -> Result<(bool, String)> {
    let intensity = prepared.intensity()?;
    let paths = simulate_replicas(prepared, &intensity)?;
    let grid = window_grid(prepared);
    let compensator = compensator_on_grid(&prepared.kernel, &intensity, prepared.m1(), &grid)?;
    let filtered = paths
        .par_iter()
        .map(|p| filtered_on_grid(p, &prepared.kernel, &grid))
        .collect::<Result<Vec<_>>>()?;

    let mut jumps = String::new();
    for (r, p) in paths.iter().enumerate() {
        for (t, z) in p.jump_times().iter().zip(p.marks()) {
            writeln!(jumps, "{r},{},{}", fmt_f64(*t), fmt_f64(*z)).expect("string write");
        }
    }
    artifacts.csv("paths.csv", "replica,t,z", &jumps)?;
    let mut values = String::new();
    for (r, f) in filtered.iter().enumerate() {
        for ((t, v), c) in grid.iter().zip(f.values()).zip(&compensator) {
            writeln!(values, "{r},{},{},{}", fmt_f64(*t), fmt_f64(*v), fmt_f64(v - c)).expect("string write");
        }
    }
    artifacts.csv("filtered.csv", "replica,t,filtered,compensated", &values)?;

    let jump_counts: Vec<usize> = paths.iter().map(MarkedPath::len).collect();
    let report = SimulateReport {
        replicas: paths.len(),
        mean_jump_count: jump_counts.iter().sum::<usize>() as f64 / paths.len() as f64,
        expected_jump_count: integrated_intensity(&intensity, prepared.config.horizon)?,
        jump_counts,
        grid_points: grid.len(),
    };
    artifacts.json("report.json", true, &report)?;
    Ok((
        true,
        format!(
            "simulate: {} paths, mean jump count {:.4} (expected {:.4})",
            report.replicas, report.mean_jump_count, report.expected_jump_count
        ),
    ))
}

#[derive(Serialize)]
struct EstimateReport {
    theta_true: f64,
    horizon: f64,
    replicas: usize,
    estimates: Vec<f64>,
    mean_estimate: f64,
    rmse: f64,
}

fn run_estimate(prepared: &Prepared, artifacts: &mut Artifacts) -> Result<(bool, String)> {
    let (reference, truth, phi) = drifted_intensity(prepared)?;
    let horizon = prepared.config.horizon;
    let paths = simulate_replicas(prepared, &truth)?;
    let estimates = paths
        .par_iter()
        .map(|p| mle_solve(p, &phi, &reference, horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut body = String::new();
    for (r, (p, v)) in paths.iter().zip(&estimates).enumerate() {
        writeln!(body, "{r},{},{}", p.len(), fmt_f64(*v)).expect("string write");
    }
    artifacts.csv("estimates.csv", "replica,jumps,theta_hat", &body)?;
    let theta = prepared.config.theta_true.expect("validated");
    let report = EstimateReport {
        theta_true: theta,
        horizon,
        replicas: estimates.len(),
        mean_estimate: estimates.iter().sum::<f64>() / estimates.len() as f64,
        rmse: rmse(&estimates, theta),
        estimates,
    };
    artifacts.json("report.json", true, &report)?;
    Ok((
        true,
        format!(
            "estimate: theta_hat mean {:.6}, rmse {:.6} over {} paths at t = {} (theta = {})",
            report.mean_estimate, report.rmse, report.replicas, horizon, theta
        ),
    ))
}

#[derive(Serialize)]
struct TrajectoryReport {
    replicas: usize,
    trace_points: Vec<usize>,
    final_estimates: Vec<f64>,
    monotonicity_violations: usize,
}

fn run_trajectory(prepared: &Prepared, artifacts: &mut Artifacts) -> Result<(bool, String)> {
    let (reference, truth, phi) = drifted_intensity(prepared)?;
    let grid = window_grid(prepared);
    let paths = simulate_replicas(prepared, &truth)?;
    let traces = paths
        .par_iter()
        .map(|p| trajectory(p, &phi, &reference, &grid))
        .collect::<Result<Vec<_>>>()?;
    let mut body = String::new();
    for (r, trace) in traces.iter().enumerate() {
        let mut epochs = trace.jump_epochs.iter().peekable();
        for (i, (t, v)) in trace.times.iter().zip(&trace.theta_hat).enumerate() {
            let jump = epochs.next_if(|&&e| e == i).is_some();
            writeln!(body, "{r},{},{},{}", fmt_f64(*t), fmt_f64(*v), u8::from(jump)).expect("string write");
        }
    }
    artifacts.csv("trajectory.csv", "replica,t,theta_hat,jump", &body)?;
    let report = TrajectoryReport {
        replicas: traces.len(),
        trace_points: traces.iter().map(|t| t.times.len()).collect(),
        final_estimates: traces.iter().map(|t| t.theta_hat[t.theta_hat.len() - 1]).collect(),
        monotonicity_violations: traces.iter().map(|t| t.monotonicity_violations()).sum(),
    };
    let pass = report.monotonicity_violations == 0;
    artifacts.json("report.json", pass, &report)?;
    Ok((
        pass,
        format!(
            "trajectory: {} traces, {} between-jump increases",
            report.replicas, report.monotonicity_violations
        ),
    ))
}

fn run_verify_girsanov(prepared: &Prepared, artifacts: &mut Artifacts) -> Result<(bool, String)> {
    let report = compare_laws(&setup_from_prepared(prepared)?)?;
    let mut body = String::new();
    for c in &report.times {
        writeln!(
            body,
            "{},{},{},{},{},{},{},{},{}",
            fmt_f64(c.t),
            fmt_f64(c.kernel_shift),
            fmt_f64(c.reweighted_mean.value),
            fmt_f64(c.shifted_mean.value),
            fmt_f64(c.mean_discrepancy_se),
            fmt_f64(c.second_moment_discrepancy_se),
            fmt_f64(c.ks_statistic),
            fmt_f64(c.ks_threshold),
            u8::from(c.moments_pass && c.ks_pass),
        )
        .expect("string write");
    }
    artifacts.csv(
        "law_comparison.csv",
        "t,kernel_shift,reweighted_mean,shifted_mean,mean_z,second_moment_z,ks,ks_threshold,pass",
        &body,
    )?;
    artifacts.json("report.json", report.pass, &report)?;
    let worst_z = report
        .times
        .iter()
        .map(|c| c.mean_discrepancy_se.max(c.second_moment_discrepancy_se))
        .fold(0.0, f64::max);
    let worst_ks = report
        .times
        .iter()
        .map(|c| c.ks_statistic / c.ks_threshold)
        .fold(0.0, f64::max);
    Ok((
        report.pass,
        format!(
            "verify-girsanov: worst moment discrepancy {worst_z:.3} SE (limit {}), worst KS/threshold {worst_ks:.3}, ESS {:.0}",
            report.moment_tolerance_se, report.effective_sample_size
        ),
    ))
}

fn run_consistency(prepared: &Prepared, artifacts: &mut Artifacts) -> Result<(bool, String)> {
    let report = consistency_experiment(&consistency_setup_from_prepared(prepared)?)?;
    let mut body = Vec::new();
    report.write_estimates_csv(&mut body)?;
    let body = String::from_utf8(body).expect("ascii CSV");
    let (header, rows) = body.split_once('\n').expect("header line");
    artifacts.csv("estimates.csv", header, rows)?;
    artifacts.json("report.json", report.pass, &report)?;
    let rmses: Vec<String> = report.horizons.iter().map(|h| format!("{:.4}", h.rmse)).collect();
    Ok((
        report.pass,
        format!(
            "consistency: rmse by horizon [{}], threshold {}",
            rmses.join(", "),
            report.rmse_threshold
        ),
    ))
}

#[derive(Serialize)]
struct SolvePhiReport {
    nodes: usize,
    residual_tolerance: f64,
    max_relative_residual: f64,
    /// Against the closed form, where one exists.
    max_relative_error: Option<f64>,
}

fn run_solve_phi(prepared: &Prepared, artifacts: &mut Artifacts) -> Result<(bool, String)> {
    let lambda = IntensitySpec::constant(prepared.base_rate())?;
    let options = VolterraOptions::default();
    let solution = solve_phi_volterra_with(&prepared.kernel, &lambda, prepared.m1(), &prepared.grid, options)?;
    let mut body = Vec::new();
    solution.phi.write_csv(&mut body)?;
    let body = String::from_utf8(body).expect("ascii CSV");
    let (header, rows) = body.split_once('\n').expect("header line");
    artifacts.csv("phi.csv", header, rows)?;
    let mut residuals = String::new();
    for (t, r) in solution.nodes.iter().zip(&solution.residuals) {
        writeln!(residuals, "{},{}", fmt_f64(*t), fmt_f64(*r)).expect("string write");
    }
    artifacts.csv("residuals.csv", "t,residual", &residuals)?;

    let max_relative_error = match closed_form_phi(&prepared.kernel, prepared.base_rate(), prepared.m1()) {
        Ok(exact) => {
            let (s, v) = solution.phi.grid_data().expect("grid solution");
            Some(
                s.iter()
                    .zip(v)
                    .map(|(&s, &v)| ((v - exact.eval(s)) / exact.eval(s)).abs())
                    .fold(0.0, f64::max),
            )
        }
        Err(_) => None,
    };
    let report = SolvePhiReport {
        nodes: solution.nodes.len(),
        residual_tolerance: options.residual_tolerance,
        max_relative_residual: solution.max_relative_residual,
        max_relative_error,
    };
    artifacts.json("report.json", true, &report)?;
    let error = report
        .max_relative_error
        .map(|e| format!(", max relative error vs closed form {e:.3e}"))
        .unwrap_or_default();
    Ok((
        true,
        format!(
            "solve-phi: {} nodes, max relative residual {:.3e}{error}",
            report.nodes, report.max_relative_residual
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json_str(text).unwrap()
    }

    fn read_all(paths: &[PathBuf]) -> Vec<(String, Vec<u8>)> {
        paths
            .iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(p).unwrap()))
            .collect()
    }

    const SIMULATE: &str = r#"{
        "experiment": "simulate",
        "kernel": {"kind": "fractional", "hurst": 0.7},
        "intensity": {"kind": "constant", "base_rate": 2.0},
        "marks": {"kind": "exponential", "mean": 1.5},
        "horizon": 3.0,
        "grid": {"start": 0.1, "stop": 3.0, "count": 30},
        "replicas": 3,
        "seed": 42
    }"#;

    #[test]
    fn simulate_twice_gives_identical_artifacts() {
        let c = config(SIMULATE);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let first = run(&c, Path::new("."), a.path()).unwrap();
        let second = run(&c, Path::new("."), b.path()).unwrap();
        assert!(first.pass);
        assert_eq!(read_all(&first.artifacts), read_all(&second.artifacts));
        let paths = fs::read_to_string(a.path().join("paths.csv")).unwrap();
        assert!(paths.starts_with("# config={"));
        assert!(paths.contains("\"seed\":42"));
        assert_eq!(paths.lines().nth(1), Some("replica,t,z"));
    }

    #[test]
    fn artifacts_echo_the_resolved_config() {
        let c = config(SIMULATE);
        let dir = tempfile::tempdir().unwrap();
        run(&c, Path::new("."), dir.path()).unwrap();
        let doc: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(doc["seed"], 42);
        let echoed: ExperimentConfig = serde_json::from_value(doc["config"].clone()).unwrap();
        assert_eq!(echoed, c.resolved());
    }

    #[test]
    fn indicator_girsanov_is_a_validation_error() {
        let c = config(
            r#"{
            "experiment": "verify-girsanov",
            "kernel": {"kind": "indicator"},
            "intensity": {"kind": "constant", "base_rate": 1.0},
            "marks": {"kind": "unit"},
            "horizon": 5.0,
            "h_spec": {"scale": 0.3},
            "replicas": 100,
            "seed": 1
        }"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let err = run(&c, Path::new("."), dir.path()).unwrap_err();
        assert_eq!(exit_code_for_error(&err), EXIT_VALIDATION);
        let record = error_record(&err);
        assert_eq!(record["error"]["kind"], "precondition");
        assert!(record["error"]["message"].as_str().unwrap().contains("diagonal"));
    }

    #[test]
    fn estimate_and_trajectory_run() {
        let dir = tempfile::tempdir().unwrap();
        let base = r#""kernel": {"kind": "indicator"},
            "intensity": {"kind": "constant", "base_rate": 1.0},
            "marks": {"kind": "unit"},
            "horizon": 20.0,
            "grid": {"start": 0.5, "stop": 20.0, "count": 40},
            "theta_true": 0.5,
            "replicas": 4,
            "seed": 9"#;
        let est = run(&config(&format!(r#"{{"experiment": "estimate", {base}}}"#)), Path::new("."), dir.path()).unwrap();
        assert!(est.pass);
        let text = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
        assert_eq!(text.lines().count(), 2 + 4);
        let traj =
            run(&config(&format!(r#"{{"experiment": "trajectory", {base}}}"#)), Path::new("."), dir.path()).unwrap();
        assert!(traj.pass, "{}", traj.summary_line());
    }

    #[test]
    fn solve_phi_reports_error_against_closed_form() {
        let c = config(
            r#"{
            "experiment": "solve-phi",
            "kernel": {"kind": "exp_shot_noise", "a": 1.0},
            "intensity": {"kind": "constant", "base_rate": 1.0},
            "marks": {"kind": "unit"},
            "horizon": 2.0,
            "grid": {"start": 0.01, "stop": 2.0, "count": 200},
            "seed": 0
        }"#,
        );
        let dir = tempfile::tempdir().unwrap();
        let outcome = run(&c, Path::new("."), dir.path()).unwrap();
        assert!(outcome.pass);
        assert!(outcome.headline.contains("closed form"), "{}", outcome.headline);
        assert!(dir.path().join("phi.csv").exists());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json_str(r#"{"experiment": "simulate", "bogus": 1}"#).unwrap_err();
        assert_eq!(exit_code_for_error(&err), EXIT_VALIDATION);
    }
}
