//! Change of measure for filtered Poisson processes.
//!
//! The density of `P_h` with respect to `P` on `[0, t]` is the stochastic
//! exponential `exp(Y_t)` with
//! `Y_t = Σ_{T_j <= t} ln(1 + h(T_j)) - ∫_0^t h(s) λ(s) ds`, and under `P_h`
//! the jump times have intensity `λ(1 + h)`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Prepared};
use crate::error::{Error, Result};
use crate::filtered::{compensator_on_grid, eval_compensated, filtered_value};
use crate::kernels::KernelSpec;
use crate::phi::PhiFunction;
use crate::point_process::{replica_seed, rng_from_seed, simulate, IntensitySpec, MarkDistributionSpec, MarkedPath};
use crate::stats::{effective_sample_size, mean_estimate, weighted_ks, weighted_ks_null_quantile, weighted_mean_estimate, Estimate};

/// How `∫|h|λ < ∞` was established.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntegrabilityWitness {
    ClosedForm,
    NumericCheck { result: f64 },
}

/// A mark-independent shift `h(s) = scale · φ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFunction {
    scale: f64,
    phi: PhiFunction,
    witness: IntegrabilityWitness,
}

impl ShiftFunction {
    pub fn zero() -> Self {
        Self {
            scale: 0.0,
            phi: PhiFunction::constant(1.0),
            witness: IntegrabilityWitness::ClosedForm,
        }
    }

    /// `h ≡ c`, admissible for `c > -1`.
    pub fn constant(c: f64) -> Result<Self> {
        if !(c > -1.0 && c.is_finite()) {
            return Err(Error::domain(format!("constant shift must exceed -1, got {c}")));
        }
        Ok(Self {
            scale: c,
            phi: PhiFunction::constant(1.0),
            witness: IntegrabilityWitness::ClosedForm,
        })
    }

    /// `h = scale · φ`, checked for `h > -1` and `∫_0^T |h| λ < ∞` on the
    /// window `[0, horizon]` under `intensity`.
    pub fn scaled_phi(scale: f64, phi: PhiFunction, intensity: &IntensitySpec, horizon: f64) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::domain("shift scale must be finite"));
        }
        if !phi.is_nonnegative() {
            return Err(Error::domain("shift needs a nonnegative phi"));
        }
        if scale < 0.0 && !(1.0 + scale * phi.sup_on(0.0, horizon) > 0.0) {
            return Err(Error::domain(format!(
                "h = {scale}·phi reaches -1 on [0, {horizon}]"
            )));
        }
        let mut shift = Self {
            scale,
            phi,
            witness: IntegrabilityWitness::ClosedForm,
        };
        if !intensity.is_constant() {
            let total = shift.scale.abs() * shift.phi.lambda_integral(intensity, horizon)?;
            if !total.is_finite() {
                return Err(Error::domain("shift is not integrable against the intensity"));
            }
            shift.witness = IntegrabilityWitness::NumericCheck { result: total };
        }
        Ok(shift)
    }

    pub fn eval(&self, s: f64) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.scale * self.phi.eval(s)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0
    }

    pub fn witness(&self) -> IntegrabilityWitness {
        self.witness
    }

    pub fn origin_exponent(&self) -> f64 {
        if self.is_zero() {
            0.0
        } else {
            self.phi.origin_exponent()
        }
    }

    /// `∫_0^t h(s) λ(s) ds`.
    pub fn lambda_integral(&self, intensity: &IntensitySpec, t: f64) -> Result<f64> {
        if self.is_zero() || t == 0.0 {
            return Ok(0.0);
        }
        Ok(self.scale * self.phi.lambda_integral(intensity, t)?)
    }
}

/// `Y_t = Σ_{T_j <= t} ln(1 + h(T_j)) - ∫_0^t h λ ds`.
pub fn log_density(path: &MarkedPath, h: &ShiftFunction, intensity: &IntensitySpec, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= path.horizon()) {
        return Err(Error::domain(format!("t = {t} outside [0, {}]", path.horizon())));
    }
    if h.is_zero() {
        return Ok(0.0);
    }
    let mut jumps = 0.0;
    for (tj, _) in path.jumps_until(t) {
        let factor = 1.0 + h.eval(tj);
        if !(factor > 0.0) {
            return Err(Error::domain(format!("1 + h({tj}) = {factor} is not positive")));
        }
        jumps += factor.ln();
    }
    Ok(jumps - h.lambda_integral(intensity, t)?)
}

/// The stochastic exponential `exp(Y_t)`.
pub fn density(path: &MarkedPath, h: &ShiftFunction, intensity: &IntensitySpec, t: f64) -> Result<f64> {
    Ok(log_density(path, h, intensity, t)?.exp())
}

/// `m₁ ∫_0^t K(t, s) h(s) λ(s) ds`.
pub fn kernel_shift(kernel: &KernelSpec, h: &ShiftFunction, intensity: &IntensitySpec, m1: f64, t: f64) -> Result<f64> {
    if h.is_zero() || t == 0.0 {
        return Ok(0.0);
    }
    let k = kernel.prepare()?;
    let alpha = h.origin_exponent() + intensity.origin_exponent();
    Ok(m1 * k.weighted_integral(t, |s| h.eval(s) * intensity.eval(s), alpha)?)
}

/// `N^{h,K}_t = Ñ^K_t - m₁ ∫_0^t K(t, s) h(s) λ(s) ds`.
pub fn shifted_compensated(
    path: &MarkedPath,
    kernel: &KernelSpec,
    h: &ShiftFunction,
    intensity: &IntensitySpec,
    m1: f64,
    t: f64,
) -> Result<f64> {
    Ok(eval_compensated(path, kernel, intensity, m1, t)? - kernel_shift(kernel, h, intensity, m1, t)?)
}

/// Everything the law comparison needs.
#[derive(Debug, Clone)]
pub struct LawComparisonSetup {
    pub kernel: KernelSpec,
    pub intensity: IntensitySpec,
    pub marks: MarkDistributionSpec,
    pub shift: ShiftFunction,
    pub horizon: f64,
    pub eval_times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
}

pub const MOMENT_TOLERANCE_SE: f64 = 4.0;
pub const KS_LEVEL: f64 = 0.01;
pub const MIN_EFFECTIVE_SAMPLE_SIZE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeComparison {
    pub t: f64,
    /// `m₁ ∫_0^t K(t, s) h(s) λ(s) ds`.
    pub kernel_shift: f64,
    /// Sample A: `Ñ^K_t` under `P`, weighted by the density.
    pub reweighted_mean: Estimate,
    /// Sample B: `N^{h,K}_t` under `P`, unit weights.
    pub shifted_mean: Estimate,
    pub mean_discrepancy_se: f64,
    pub reweighted_second_moment: Estimate,
    pub shifted_second_moment: Estimate,
    pub second_moment_discrepancy_se: f64,
    /// Unweighted `Ñ^K_t` under `P`.
    pub reference_mean: Estimate,
    /// Reweighted minus reference mean.
    pub observed_mean_shift: Estimate,
    pub ks_statistic: f64,
    pub ks_threshold: f64,
    pub moments_pass: bool,
    pub ks_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawComparisonReport {
    pub replicas: usize,
    pub seed: u64,
    pub horizon: f64,
    pub effective_sample_size: f64,
    pub mean_weight: Estimate,
    pub unit_expectation_pass: bool,
    pub shift_witness: IntegrabilityWitness,
    pub bootstrap_resamples: usize,
    pub ks_level: f64,
    pub moment_tolerance_se: f64,
    pub times: Vec<TimeComparison>,
    pub pass: bool,
}

struct Replica {
    compensated: Vec<f64>,
    weight: f64,
}

pub fn setup_from_prepared(prepared: &Prepared) -> Result<LawComparisonSetup> {
    let config = &prepared.config;
    let h_spec = config
        .h_spec
        .ok_or_else(|| Error::Config("verify-girsanov needs h_spec".into()))?;
    let intensity = prepared.intensity()?;
    let shift = ShiftFunction::scaled_phi(h_spec.scale, prepared.phi(h_spec.phi_source)?, &intensity, config.horizon)?;
    Ok(LawComparisonSetup {
        kernel: prepared.kernel.clone(),
        intensity,
        marks: prepared.marks.clone(),
        shift,
        horizon: config.horizon,
        eval_times: config.eval_times.clone().expect("resolved config"),
        replicas: config.replicas,
        seed: config.seed,
        bootstrap_resamples: config.bootstrap_resamples.expect("resolved config"),
    })
}

/// Runs the comparison described by `config`; relative file references
/// resolve against the working directory.
pub fn verify_equality_in_law(config: &ExperimentConfig) -> Result<LawComparisonReport> {
    compare_laws(&setup_from_prepared(&config.prepare(Path::new("."))?)?)
}

/// Simulates `R` paths under `P` and compares the density-weighted law of
/// `(Ñ^K_{t_1}, …)` with the unweighted law of `(N^{h,K}_{t_1}, …)`.
pub fn compare_laws(setup: &LawComparisonSetup) -> Result<LawComparisonReport> {
    if !setup.kernel.is_diagonal_degenerate() {
        return Err(Error::Precondition(
            "the change of measure needs a kernel that vanishes on the diagonal, K(t,t) = 0".into(),
        ));
    }
    if setup.eval_times.iter().any(|&t| !(t > 0.0 && t <= setup.horizon)) {
        return Err(Error::domain("evaluation times must lie in (0, horizon]"));
    }
    let m1 = setup.marks.mean();
    let compensators = compensator_on_grid(&setup.kernel, &setup.intensity, m1, &setup.eval_times)?;
    let shifts = setup
        .eval_times
        .iter()
        .map(|&t| kernel_shift(&setup.kernel, &setup.shift, &setup.intensity, m1, t))
        .collect::<Result<Vec<_>>>()?;
    let kernel = setup.kernel.prepare()?;

    let replicas = (0..setup.replicas)
        .into_par_iter()
        .map(|r| {
            let path = simulate(&setup.intensity, &setup.marks, setup.horizon, replica_seed(setup.seed, r))?;
            let compensated = setup
                .eval_times
                .iter()
                .zip(&compensators)
                .map(|(&t, c)| Ok(filtered_value(&path, &kernel, t)? - c))
                .collect::<Result<Vec<_>>>()?;
            let weight = density(&path, &setup.shift, &setup.intensity, setup.horizon)?;
            Ok(Replica { compensated, weight })
        })
        .collect::<Result<Vec<_>>>()?;

    let weights: Vec<f64> = replicas.iter().map(|r| r.weight).collect();
    let ess = effective_sample_size(&weights);
    if !(ess >= MIN_EFFECTIVE_SAMPLE_SIZE) {
        return Err(Error::DegenerateWeights {
            ess,
            min: MIN_EFFECTIVE_SAMPLE_SIZE,
        });
    }
    let mean_weight = mean_estimate(&weights);
    let unit_expectation_pass = (mean_weight.value - 1.0).abs() <= MOMENT_TOLERANCE_SE * mean_weight.se;
    let weight_scale = weights.iter().sum::<f64>() / weights.len() as f64;

    let mut times = Vec::with_capacity(setup.eval_times.len());
    for (k, (&t, &shift)) in setup.eval_times.iter().zip(&shifts).enumerate() {
        let x: Vec<f64> = replicas.iter().map(|r| r.compensated[k]).collect();
        let y: Vec<f64> = x.iter().map(|v| v - shift).collect();
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
        let reweighted_mean = weighted_mean_estimate(&x, &weights);
        let shifted_mean = mean_estimate(&y);
        let reweighted_second_moment = weighted_mean_estimate(&x2, &weights);
        let shifted_second_moment = mean_estimate(&y2);
        let reference_mean = mean_estimate(&x);
        // linearized difference of the self-normalized and plain means
        let influence: Vec<f64> = x
            .iter()
            .zip(&weights)
            .map(|(v, w)| w / weight_scale * (v - reweighted_mean.value) - (v - reference_mean.value))
            .collect();
        let observed_mean_shift = Estimate {
            value: reweighted_mean.value - reference_mean.value,
            se: mean_estimate(&influence).se,
        };
        let mean_discrepancy_se = reweighted_mean.z_distance(&shifted_mean);
        let second_moment_discrepancy_se = reweighted_second_moment.z_distance(&shifted_second_moment);
        let ks_statistic = weighted_ks(&x, &weights, &y, &vec![1.0; y.len()]);
        let mut rng: ChaCha8Rng = rng_from_seed(setup.seed);
        rng.set_stream(1 + k as u64);
        let ks_threshold = weighted_ks_null_quantile(&x, &weights, setup.bootstrap_resamples, 1.0 - KS_LEVEL, &mut rng)?;
        let moments_pass =
            mean_discrepancy_se <= MOMENT_TOLERANCE_SE && second_moment_discrepancy_se <= MOMENT_TOLERANCE_SE;
        // identical samples pass even when the bootstrap quantile is 0
        let ks_pass = ks_statistic < ks_threshold || ks_statistic == 0.0;
        times.push(TimeComparison {
            t,
            kernel_shift: shift,
            reweighted_mean,
            shifted_mean,
            mean_discrepancy_se,
            reweighted_second_moment,
            shifted_second_moment,
            second_moment_discrepancy_se,
            reference_mean,
            observed_mean_shift,
            ks_statistic,
            ks_threshold,
            moments_pass,
            ks_pass,
        });
    }
    let pass = times.iter().all(|c| c.moments_pass && c.ks_pass);
    Ok(LawComparisonReport {
        replicas: setup.replicas,
        seed: setup.seed,
        horizon: setup.horizon,
        effective_sample_size: ess,
        mean_weight,
        unit_expectation_pass,
        shift_witness: setup.shift.witness(),
        bootstrap_resamples: setup.bootstrap_resamples,
        ks_level: KS_LEVEL,
        moment_tolerance_se: MOMENT_TOLERANCE_SE,
        times,
        pass,
    })
}
