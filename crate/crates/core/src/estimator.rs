//! Maximum-likelihood estimation of the drift `θ` of the observed process
//! `X^θ = Ñ^K - θ t`, its trajectory in `t`, and the consistency
//! experiment.
//!
//! With `φ` the calibration function, the log-likelihood is
//! `f(θ) = Σ_{T_j <= t} ln(1 + θ φ(T_j)) - θ ∫_0^t φ λ ds`, a concave
//! function of `θ >= 0`. The estimator is its maximizer: the positive root
//! of `f'` when `f'(0) > 0` and `0` otherwise.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Prepared, PhiSource};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::phi::PhiFunction;
use crate::point_process::{replica_seed, simulate, IntensitySpec, MarkDistributionSpec, MarkedPath};
use crate::stats::{mean_abs_error, median, rmse};

/// `f(θ)` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

pub const THETA_TOLERANCE: f64 = 1e-10;
pub const BRACKET_LIMIT: f64 = 1e12;
const MAX_ITERATIONS: usize = 500;

/// The likelihood at a fixed time, reduced to what it depends on: `φ` at
/// the jump times up to `t` and `∫_0^t φ λ ds`.
#[derive(Debug, Clone)]
struct Likelihood<'a> {
    phis: &'a [f64],
    compensator: f64,
}

impl Likelihood<'_> {
    fn score(&self, theta: f64) -> Score {
        let mut value = -theta * self.compensator;
        let mut slope = -self.compensator;
        let mut curvature = 0.0;
        for &p in self.phis {
            let d = 1.0 + theta * p;
            let q = p / d;
            value += (theta * p).ln_1p();
            slope += q;
            curvature -= q * q;
        }
        Score {
            value,
            slope,
            curvature,
        }
    }

    fn slope(&self, theta: f64) -> f64 {
        self.phis.iter().map(|&p| p / (1.0 + theta * p)).sum::<f64>() - self.compensator
    }

    /// Safeguarded Newton on a doubling bracket. `hint` only affects speed.
    fn solve(&self, hint: Option<f64>) -> Result<f64> {
        let total: f64 = self.phis.iter().sum();
        if total - self.compensator <= 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.slope(hi) >= 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > BRACKET_LIMIT {
                return Err(Error::BracketFailure { limit: BRACKET_LIMIT });
            }
        }
        let moment_guess = (total / self.compensator - 1.0).max(0.0) + 0.1;
        let start = hint.filter(|h| *h > 0.0).unwrap_or(moment_guess);
        let mut theta = if start > lo && start < hi {
            start
        } else {
            0.5 * (lo + hi)
        };
        for _ in 0..MAX_ITERATIONS {
            let s = self.score(theta);
            if s.slope == 0.0 {
                return Ok(theta);
            }
            if s.slope > 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            let newton = theta - s.slope / s.curvature;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - theta).abs();
            theta = next;
            if step <= THETA_TOLERANCE || hi - lo <= THETA_TOLERANCE {
                return Ok(theta);
            }
        }
        Err(Error::NonConvergence {
            what: "likelihood root",
            detail: format!("bracket [{lo}, {hi}] after {MAX_ITERATIONS} iterations"),
        })
    }
}

fn check_time(path: &MarkedPath, t: f64) -> Result<()> {
    if !(t > 0.0 && t <= path.horizon()) {
        return Err(Error::domain(format!(
            "estimation time {t} outside (0, {}]",
            path.horizon()
        )));
    }
    Ok(())
}

fn phi_at_jumps(path: &MarkedPath, phi: &PhiFunction, t: f64) -> Vec<f64> {
    path.jump_times()
        .iter()
        .take_while(|&&tj| tj <= t)
        .map(|&tj| phi.eval(tj))
        .collect()
}

/// `f(θ)`, `f'(θ)` and `f''(θ)` at time `t`.
pub fn score(
    path: &MarkedPath,
    phi: &PhiFunction,
    intensity: &IntensitySpec,
    theta: f64,
    t: f64,
) -> Result<Score> {
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::domain(format!("theta must be >= 0, got {theta}")));
    }
    check_time(path, t)?;
    let phis = phi_at_jumps(path, phi, t);
    let likelihood = Likelihood {
        phis: &phis,
        compensator: phi.lambda_integral(intensity, t)?,
    };
    Ok(likelihood.score(theta))
}

/// The maximum-likelihood estimate `θ̂_t` over `θ >= 0`.
pub fn mle_solve(path: &MarkedPath, phi: &PhiFunction, intensity: &IntensitySpec, t: f64) -> Result<f64> {
    check_time(path, t)?;
    let phis = phi_at_jumps(path, phi, t);
    Likelihood {
        phis: &phis,
        compensator: phi.lambda_integral(intensity, t)?,
    }
    .solve(None)
}

/// `θ̂` along a time grid, with the jump times inside the grid's range
/// merged in so that every jump epoch is an entry of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrace {
    pub times: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Indices into `times` that are jump times.
    pub jump_epochs: Vec<usize>,
}

impl EstimateTrace {
    /// Number of increases of `θ̂` that do not happen at a jump epoch.
    pub fn monotonicity_violations(&self) -> usize {
        let mut epochs = self.jump_epochs.iter().peekable();
        let mut count = 0;
        for i in 1..self.times.len() {
            while epochs.next_if(|&&e| e < i).is_some() {}
            let at_jump = epochs.peek() == Some(&&i);
            if !at_jump && self.theta_hat[i] > self.theta_hat[i - 1] {
                count += 1;
            }
        }
        count
    }

    /// CSV with header `t,theta_hat,jump`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,theta_hat,jump")?;
        let mut epochs = self.jump_epochs.iter().peekable();
        for (i, (t, v)) in self.times.iter().zip(&self.theta_hat).enumerate() {
            let jump = epochs.next_if(|&&e| e == i).is_some();
            writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(*v), u8::from(jump))?;
        }
        Ok(())
    }
}

/// `θ̂_t` for every `t` of `grid` and every jump time between its ends.
pub fn trajectory(
    path: &MarkedPath,
    phi: &PhiFunction,
    intensity: &IntensitySpec,
    grid: &[f64],
) -> Result<EstimateTrace> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("trajectory grid must be nonempty and strictly increasing"));
    }
    check_time(path, grid[0])?;
    check_time(path, grid[grid.len() - 1])?;
    let (first, last) = (grid[0], grid[grid.len() - 1]);

    let mut times = Vec::with_capacity(grid.len() + path.len());
    let mut jump_epochs = Vec::new();
    let mut jumps = path
        .jump_times()
        .iter()
        .copied()
        .filter(|&tj| tj >= first && tj <= last)
        .peekable();
    for &g in grid {
        while let Some(tj) = jumps.next_if(|&tj| tj <= g) {
            jump_epochs.push(times.len());
            times.push(tj);
        }
        if times.last() != Some(&g) {
            times.push(g);
        }
    }

    let all_phis: Vec<f64> = path.jump_times().iter().map(|&tj| phi.eval(tj)).collect();
    let mut theta_hat = Vec::with_capacity(times.len());
    let mut previous = None;
    for &t in &times {
        let likelihood = Likelihood {
            phis: &all_phis[..path.count_until(t)],
            compensator: phi.lambda_integral(intensity, t)?,
        };
        let v = likelihood.solve(previous)?;
        previous = Some(v);
        theta_hat.push(v);
    }
    Ok(EstimateTrace {
        times,
        theta_hat,
        jump_epochs,
    })
}

/// Everything the consistency experiment needs.
#[derive(Debug, Clone)]
pub struct ConsistencySetup {
    pub phi: PhiFunction,
    /// `λ` of the reference measure; jumps are simulated at rate
    /// `λ (1 + θ φ)`.
    pub base_rate: f64,
    pub marks: MarkDistributionSpec,
    pub theta_true: f64,
    pub horizons: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub rmse_threshold: f64,
}

/// What the theorem's hypotheses look like for the `φ` in use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    /// `p` with `∫_0^t φ² λ ∝ t^p` for large `t`, when `φ` is a closed form.
    pub phi_square_growth_exponent: Option<f64>,
    pub phi_square_diverges: Option<bool>,
    /// `c` with `∫φ^{2+j}λ / ∫φ²λ ∝ t^{-c j}`; nonpositive `c` means the
    /// ratio does not vanish.
    pub ratio_decay_rate: Option<f64>,
    /// Largest `j` for which `φ^{2+j}` stays integrable at the origin.
    pub ratio_integrable_below_j: Option<f64>,
    pub statement: String,
}

impl HypothesisCheck {
    pub fn for_phi(phi: &PhiFunction) -> Self {
        if let Some(h) = phi.hurst() {
            let b = h - 0.5;
            let limit = 1.0 / b - 2.0;
            return Self {
                phi_square_growth_exponent: Some(2.0 - 2.0 * h),
                phi_square_diverges: Some(true),
                ratio_decay_rate: Some(b),
                ratio_integrable_below_j: Some(limit),
                statement: format!(
                    "phi ~ s^(1/2-H) with H = {h}: int phi^2 lambda grows like t^{:.6}; for 0 < j < {limit:.6} \
                     int phi^(2+j) lambda / int phi^2 lambda decays like t^(-{b:.6} j); for larger j, phi^(2+j) \
                     is not integrable at the origin",
                    2.0 - 2.0 * h
                ),
            };
        }
        let (intercept, slope) = (phi.eval(0.0), phi.eval(1.0) - phi.eval(0.0));
        if phi.grid_data().is_none() && slope == 0.0 {
            return Self {
                phi_square_growth_exponent: Some(1.0),
                phi_square_diverges: Some(intercept > 0.0),
                ratio_decay_rate: Some(0.0),
                ratio_integrable_below_j: None,
                statement: format!(
                    "phi = {intercept} is constant: int phi^2 lambda grows like t, the ratio condition does not \
                     hold (the ratio equals phi^j); the estimator reduces to a Poisson rate estimate"
                ),
            };
        }
        if phi.grid_data().is_none() {
            return Self {
                phi_square_growth_exponent: Some(3.0),
                phi_square_diverges: Some(true),
                ratio_decay_rate: Some(-1.0),
                ratio_integrable_below_j: None,
                statement: "phi is affine and increasing: int phi^2 lambda grows like t^3, the ratio grows like t^j \
                            and the ratio condition does not hold"
                    .into(),
            };
        }
        Self {
            phi_square_growth_exponent: None,
            phi_square_diverges: None,
            ratio_decay_rate: None,
            ratio_integrable_below_j: None,
            statement: "phi is tabulated on a finite grid; growth conditions are not checked".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: f64,
    pub mean_estimate: f64,
    pub median_estimate: f64,
    pub mean_abs_error: f64,
    pub rmse: f64,
    pub zero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub theta_true: f64,
    pub base_rate: f64,
    pub replicas: usize,
    pub seed: u64,
    pub rmse_threshold: f64,
    pub horizons: Vec<HorizonSummary>,
    /// Replicas whose absolute error at the last horizon is below the one
    /// at the first.
    pub fraction_final_error_below_first: f64,
    /// Replicas whose absolute error never increases across horizons.
    pub fraction_error_nonincreasing: f64,
    pub rmse_decreasing: bool,
    pub final_rmse_below_threshold: bool,
    pub hypotheses: HypothesisCheck,
    pub pass: bool,
    /// `θ̂` per replica (rows) and horizon (columns).
    #[serde(skip)]
    pub estimates: Vec<Vec<f64>>,
}

impl ConsistencyReport {
    /// CSV with header `replica,horizon,theta_hat`.
    pub fn write_estimates_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "replica,horizon,theta_hat")?;
        for (r, row) in self.estimates.iter().enumerate() {
            for (h, v) in self.horizons.iter().zip(row) {
                writeln!(out, "{r},{},{}", fmt_f64(h.horizon), fmt_f64(*v))?;
            }
        }
        Ok(())
    }
}

pub fn consistency_setup_from_prepared(prepared: &Prepared) -> Result<ConsistencySetup> {
    let config = &prepared.config;
    let source: PhiSource = config.estimation_phi_source();
    Ok(ConsistencySetup {
        phi: prepared.phi(source)?,
        base_rate: prepared.base_rate(),
        marks: prepared.marks,
        theta_true: config
            .theta_true
            .ok_or_else(|| Error::Config("consistency needs theta_true".into()))?,
        horizons: config.horizons.clone().expect("resolved config"),
        replicas: config.replicas,
        seed: config.seed,
        rmse_threshold: config.rmse_threshold.expect("resolved config"),
    })
}

/// Simulates `R` paths under `P_θ` up to the last horizon and tracks the
/// estimation error across horizons.
pub fn consistency_experiment(setup: &ConsistencySetup) -> Result<ConsistencyReport> {
    let horizons = &setup.horizons;
    if horizons.is_empty() || horizons[0] <= 0.0 || horizons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("horizons must be positive and strictly increasing"));
    }
    if !(setup.theta_true > 0.0 && setup.theta_true.is_finite()) {
        return Err(Error::domain(format!("theta_true must be > 0, got {}", setup.theta_true)));
    }
    if setup.replicas == 0 {
        return Err(Error::domain("need at least one replica"));
    }
    let last = horizons[horizons.len() - 1];
    let reference = IntensitySpec::constant(setup.base_rate)?;
    let truth = IntensitySpec::scaled_by_phi(setup.base_rate, setup.theta_true, setup.phi.clone())?;
    let compensators = horizons
        .iter()
        .map(|&t| setup.phi.lambda_integral(&reference, t))
        .collect::<Result<Vec<_>>>()?;

    let estimates = (0..setup.replicas)
        .into_par_iter()
        .map(|r| {
            let path = simulate(&truth, &setup.marks, last, replica_seed(setup.seed, r))?;
            if path.is_empty() {
                return Err(Error::Degenerate(format!(
                    "replica {r} has no jumps up to the last horizon {last}"
                )));
            }
            let phis = phi_at_jumps(&path, &setup.phi, last);
            horizons
                .iter()
                .zip(&compensators)
                .map(|(&t, &c)| {
                    Likelihood {
                        phis: &phis[..path.count_until(t)],
                        compensator: c,
                    }
                    .solve(None)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let theta = setup.theta_true;
    let summaries: Vec<HorizonSummary> = horizons
        .iter()
        .enumerate()
        .map(|(k, &horizon)| {
            let column: Vec<f64> = estimates.iter().map(|row| row[k]).collect();
            HorizonSummary {
                horizon,
                mean_estimate: column.iter().sum::<f64>() / column.len() as f64,
                median_estimate: median(&column),
                mean_abs_error: mean_abs_error(&column, theta),
                rmse: rmse(&column, theta),
                zero_fraction: column.iter().filter(|&&v| v == 0.0).count() as f64 / column.len() as f64,
            }
        })
        .collect();
    let n = estimates.len() as f64;
    let errors = |row: &Vec<f64>| row.iter().map(|v| (v - theta).abs()).collect::<Vec<f64>>();
    let fraction_final_error_below_first = estimates
        .iter()
        .filter(|row| {
            let e = errors(row);
            e[e.len() - 1] < e[0]
        })
        .count() as f64
        / n;
    let fraction_error_nonincreasing = estimates
        .iter()
        .filter(|row| errors(row).windows(2).all(|w| w[1] <= w[0]))
        .count() as f64
        / n;
    let rmse_decreasing = summaries.windows(2).all(|w| w[1].rmse < w[0].rmse);
    let final_rmse_below_threshold = summaries[summaries.len() - 1].rmse < setup.rmse_threshold;
    Ok(ConsistencyReport {
        theta_true: theta,
        base_rate: setup.base_rate,
        replicas: setup.replicas,
        seed: setup.seed,
        rmse_threshold: setup.rmse_threshold,
        horizons: summaries,
        fraction_final_error_below_first,
        fraction_error_nonincreasing,
        rmse_decreasing,
        final_rmse_below_threshold,
        hypotheses: HypothesisCheck::for_phi(&setup.phi),
        pass: rmse_decreasing && final_rmse_below_threshold,
        estimates,
    })
}
