//! The filtered process `N^K_t = Σ_{T_n <= t} Z_n K(t, T_n)`, its
//! compensated version `Ñ^K` and the observed process `X^θ = Ñ^K - θt`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_rows};
use crate::kernels::{kernel_lambda_integral, Kernel, KernelSpec};
use crate::point_process::{IntensitySpec, MarkedPath};

#[derive(Debug, Clone, PartialEq)]
pub struct PathMeta {
    pub kernel: KernelSpec,
    pub compensated: bool,
    pub drift_theta: f64,
}

/// A process sampled on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOnGrid {
    grid: Vec<f64>,
    values: Vec<f64>,
    meta: PathMeta,
}

impl PathOnGrid {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, meta: PathMeta) -> Result<Self> {
        check_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(Error::domain("grid and values differ in length"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite process value {v}")));
        }
        Ok(Self { grid, values, meta })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> &PathMeta {
        &self.meta
    }

    /// Largest absolute change between consecutive grid points.
    pub fn max_increment(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, meta: PathMeta) -> Result<Self> {
        let rows = read_csv_rows(input, &["t", "value"])?;
        let (grid, values) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::new(grid, values, meta)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first().is_some_and(|&t| !(t >= 0.0)) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("time grid must be nonnegative and strictly increasing"));
    }
    Ok(())
}

fn check_time(path: &MarkedPath, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= path.horizon()) {
        return Err(Error::domain(format!(
            "t = {t} outside [0, {}]",
            path.horizon()
        )));
    }
    Ok(())
}

/// `N^K_t` for an already prepared kernel.
pub fn filtered_value(path: &MarkedPath, kernel: &Kernel, t: f64) -> Result<f64> {
    check_time(path, t)?;
    let mut total = 0.0;
    for (tn, z) in path.jumps_until(t) {
        total += z * kernel.eval(t, tn)?;
    }
    Ok(total)
}

pub fn eval_filtered(path: &MarkedPath, kernel: &KernelSpec, t: f64) -> Result<f64> {
    filtered_value(path, &kernel.prepare()?, t)
}

/// `m₁ ∫_0^t K(t, s) λ(s) ds`.
pub fn compensator(kernel: &KernelSpec, intensity: &IntensitySpec, m1: f64, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(m1 * kernel_lambda_integral(kernel, intensity, t)?)
}

/// The compensator at every grid time; it does not depend on the path, so
/// callers evaluating many paths should compute it once.
pub fn compensator_on_grid(
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    grid: &[f64],
) -> Result<Vec<f64>> {
    check_grid(grid)?;
    grid.iter().map(|&t| compensator(kernel, intensity, m1, t)).collect()
}

pub fn eval_compensated(
    path: &MarkedPath,
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    t: f64,
) -> Result<f64> {
    Ok(eval_filtered(path, kernel, t)? - compensator(kernel, intensity, m1, t)?)
}

pub fn eval_observed(
    path: &MarkedPath,
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    theta: f64,
    t: f64,
) -> Result<f64> {
    Ok(eval_compensated(path, kernel, intensity, m1, t)? - theta * t)
}

/// Shot noise with `K(t, s) = e^{-a(t-s)}` by the state recursion
/// `v ← v e^{-aΔt} + Σ new marks`.
pub fn exp_shot_noise_recursion(path: &MarkedPath, a: f64, grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let jumps = path.jump_times();
    let marks = path.marks();
    let mut out = Vec::with_capacity(grid.len());
    let (mut value, mut clock, mut next) = (0.0, 0.0, 0);
    for &t in grid {
        check_time(path, t)?;
        while next < jumps.len() && jumps[next] <= t {
            value = value * (-a * (jumps[next] - clock)).exp() + marks[next];
            clock = jumps[next];
            next += 1;
        }
        out.push(value * (-a * (t - clock)).exp());
    }
    Ok(out)
}

/// `N^K` on a grid; shot noise goes through the recursion, every other
/// kernel through the direct sum.
pub fn filtered_on_grid(path: &MarkedPath, kernel: &KernelSpec, grid: &[f64]) -> Result<PathOnGrid> {
    let values = match kernel {
        KernelSpec::ExpShotNoise { a } => exp_shot_noise_recursion(path, *a, grid)?,
        _ => {
            check_grid(grid)?;
            let prepared = kernel.prepare()?;
            grid.iter()
                .map(|&t| filtered_value(path, &prepared, t))
                .collect::<Result<_>>()?
        }
    };
    PathOnGrid::new(
        grid.to_vec(),
        values,
        PathMeta {
            kernel: kernel.clone(),
            compensated: false,
            drift_theta: 0.0,
        },
    )
}

/// `X^θ = N^K - m₁∫Kλ - θt` on a grid; `θ = 0` gives `Ñ^K`.
pub fn observed_on_grid(
    path: &MarkedPath,
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    theta: f64,
    grid: &[f64],
) -> Result<PathOnGrid> {
    let raw = filtered_on_grid(path, kernel, grid)?;
    let comp = compensator_on_grid(kernel, intensity, m1, grid)?;
    let values = raw
        .values
        .iter()
        .zip(&comp)
        .zip(grid)
        .map(|((v, c), t)| v - c - theta * t)
        .collect();
    PathOnGrid::new(
        grid.to_vec(),
        values,
        PathMeta {
            kernel: kernel.clone(),
            compensated: true,
            drift_theta: theta,
        },
    )
}

pub fn compensated_on_grid(
    path: &MarkedPath,
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    grid: &[f64],
) -> Result<PathOnGrid> {
    observed_on_grid(path, kernel, intensity, m1, 0.0, grid)
}
