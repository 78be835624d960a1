//! Filtered Poisson processes `N^K_t = Σ Z_n K(t, T_n)`: simulation,
//! the Girsanov change of measure, and maximum-likelihood estimation of a
//! drift `θ` in `X^θ_t = N^K_t - m₁∫K λ - θ t`.
//!
//! The kernels of interest are shot noise and the kernel `K_H` of
//! fractional Brownian motion. Drift estimation runs through the
//! calibration function `φ`, the solution of `m₁ ∫_0^t K(t, s) φ(s) λ(s) ds = t`.

pub mod config;
pub mod error;
pub mod estimator;
pub mod filtered;
pub mod girsanov;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod phi;
pub mod point_process;
pub mod quad;
pub mod special;
pub mod stats;

pub use config::{ExperimentConfig, ExperimentKind, PhiSource, Prepared};
pub use error::{Error, ErrorClass, Result};
pub use estimator::{mle_solve, score, trajectory, ConsistencyReport, EstimateTrace, Score};
pub use filtered::PathOnGrid;
pub use girsanov::{LawComparisonReport, ShiftFunction};
pub use kernels::{Kernel, KernelSpec, TabulatedKernel};
pub use phi::PhiFunction;
pub use point_process::{IntensitySpec, MarkDistributionSpec, MarkedPath};
pub use stats::Estimate;
