//! Fixtures shared by the benchmark targets.

use fpp_core::phi::{phi_fractional, PhiFunction};
use fpp_core::point_process::{simulate, IntensitySpec, MarkDistributionSpec, MarkedPath};

pub const HURST: f64 = 0.7;

pub fn unit_rate() -> IntensitySpec {
    IntensitySpec::constant(1.0).expect("positive rate")
}

pub fn fractional_phi() -> PhiFunction {
    phi_fractional(HURST, 1.0).expect("admissible Hurst index")
}

/// A path under the drifted measure `λ(1 + θφ)` with `θ = 1`.
pub fn drifted_path(horizon: f64, seed: u64) -> MarkedPath {
    let truth = IntensitySpec::scaled_by_phi(1.0, 1.0, fractional_phi()).expect("valid intensity");
    simulate(&truth, &MarkDistributionSpec::Unit, horizon, seed).expect("simulation")
}

pub fn uniform_grid(start: f64, stop: f64, count: usize) -> Vec<f64> {
    let step = (stop - start) / (count - 1) as f64;
    (0..count).map(|i| start + step * i as f64).collect()
}
