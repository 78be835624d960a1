//! Triangular deterministic kernels `K(t, s)`.
//!
//! A [`KernelSpec`] is the declarative description; [`KernelSpec::prepare`]
//! turns it into a [`Kernel`] with any constants precomputed, which is what
//! the hot loops call.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_rows};
use crate::point_process::IntensitySpec;
use crate::quad::{self, Tolerance};
use crate::special::{gamma, ln_gamma};

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `K(t, s) = 1_{s <= t}`; `N^K` is the marked counting process.
    Indicator,
    /// Shot noise `K(t, s) = exp(-a (t - s)) 1_{s <= t}`.
    ExpShotNoise { a: f64 },
    /// Fractional Brownian kernel `K_H` with Hurst index `H` in `(1/2, 1)`.
    Fractional { hurst: f64 },
    Tabulated(TabulatedKernel),
}

/// Sample-path regularity of `N^K` implied by the kernel's diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagonalClass {
    ContinuousPaths,
    CadlagPaths,
    Irregular,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Indicator => Ok(()),
            KernelSpec::ExpShotNoise { a } if *a > 0.0 && a.is_finite() => Ok(()),
            KernelSpec::ExpShotNoise { a } => {
                Err(Error::domain(format!("shot-noise decay must be positive, got {a}")))
            }
            KernelSpec::Fractional { hurst } if *hurst > 0.5 && *hurst < 1.0 => Ok(()),
            KernelSpec::Fractional { hurst } => Err(Error::domain(format!(
                "fractional kernel needs H in (1/2, 1), got {hurst}"
            ))),
            KernelSpec::Tabulated(t) => t.validate(),
        }
    }

    pub fn prepare(&self) -> Result<Kernel> {
        self.validate()?;
        Ok(match self {
            KernelSpec::Indicator => Kernel::Indicator,
            KernelSpec::ExpShotNoise { a } => Kernel::ExpShotNoise { a: *a },
            KernelSpec::Fractional { hurst } => Kernel::Fractional(FractionalKernel::new(*hurst)?),
            KernelSpec::Tabulated(t) => Kernel::Tabulated(t.clone()),
        })
    }

    pub fn is_diagonal_degenerate(&self) -> bool {
        diagonal_class(self) == DiagonalClass::ContinuousPaths
    }
}

/// `K(t, s)`; exactly zero above the diagonal.
pub fn kernel_eval(spec: &KernelSpec, t: f64, s: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!("kernel needs t > 0, got {t}")));
    }
    spec.prepare()?.eval(t, s)
}

pub fn diagonal_class(spec: &KernelSpec) -> DiagonalClass {
    match spec {
        KernelSpec::Indicator | KernelSpec::ExpShotNoise { .. } => DiagonalClass::CadlagPaths,
        // (t - s)^{H - 1/2} vanishes on the diagonal for H > 1/2
        KernelSpec::Fractional { hurst } if *hurst > 0.5 => DiagonalClass::ContinuousPaths,
        KernelSpec::Fractional { .. } => DiagonalClass::Irregular,
        KernelSpec::Tabulated(t) => t.diagonal_class(),
    }
}

/// `∫_0^t K(t, s) λ(s) ds`.
pub fn kernel_lambda_integral(spec: &KernelSpec, intensity: &IntensitySpec, t: f64) -> Result<f64> {
    let kernel = spec.prepare()?;
    kernel.weighted_integral(t, |s| intensity.eval(s), intensity.origin_exponent())
}

#[derive(Debug, Clone)]
pub enum Kernel {
    Indicator,
    ExpShotNoise { a: f64 },
    Fractional(FractionalKernel),
    Tabulated(TabulatedKernel),
}

impl Kernel {
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        if s > t {
            return Ok(0.0);
        }
        match self {
            Kernel::Indicator => Ok(1.0),
            Kernel::ExpShotNoise { a } => Ok((-a * (t - s)).exp()),
            Kernel::Fractional(k) => k.eval(t, s),
            Kernel::Tabulated(k) => k.eval(t, s),
        }
    }

    /// `α` with `K(t, s) = O(s^{-α})` as `s -> 0`.
    pub fn origin_exponent(&self) -> f64 {
        match self {
            Kernel::Fractional(k) => k.hurst - 0.5,
            _ => 0.0,
        }
    }

    /// `β` with `K(t, s) ~ (t - s)^β` as `s -> t`.
    pub fn diagonal_exponent(&self) -> f64 {
        match self {
            Kernel::Fractional(k) => k.hurst - 0.5,
            _ => 0.0,
        }
    }

    /// `∫_0^t K(t, s) g(s) ds` where `g(s) = O(s^{-g_alpha})` at the origin.
    pub fn weighted_integral<G: Fn(f64) -> f64>(&self, t: f64, g: G, g_alpha: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("integral needs t >= 0, got {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let tol = Tolerance::new(1e-14, 1e-11);
        let f = |s: f64| self.eval(t, s).map(|k| k * g(s)).unwrap_or(f64::NAN);
        let alpha = self.origin_exponent() + g_alpha.max(0.0);
        if let Kernel::Tabulated(k) = self {
            // integrate cell by cell so bilinear kinks sit on segment ends
            let mut total = 0.0;
            let mut lo = 0.0;
            for &node in k.ss.iter().filter(|&&x| x > 0.0 && x < t) {
                total += quad::integrate(&f, lo, node, tol)?;
                lo = node;
            }
            return Ok(total + quad::integrate(&f, lo, t, tol)?);
        }
        let half = 0.5 * t;
        let left = quad::integrate_from_origin(&f, half, alpha, tol)?;
        let right = quad::integrate(&f, half, t, tol)?;
        Ok(left + right)
    }
}

/// `K_H(t,s) = (t-s)^{H-1/2} F(H-1/2, 1/2-H, H+1/2, 1-t/s) / Γ(H+1/2)`.
///
/// With `β = H - 1/2` and `x = s/t`, the Pfaff transform turns `F` into
/// `x^{-β} G(1 - x)` where `G(w) = F(-β, 1; 1 + β; w)`. For `x >= 1/2`
/// the Gauss series of `G` is summed directly; below that the connection
/// formula leaves one series `F(-β, 1; 1 - 2β; x)` plus the closed form
/// `F(1 + 2β, β; 1 + 2β; x) = (1 - x)^{-β}`. Both series have their
/// arguments in `[0, 1/2]`, so a fixed number of terms suffices.
#[derive(Debug, Clone)]
pub struct FractionalKernel {
    hurst: f64,
    beta: f64,
    /// `g1 / Γ(1 + β)` of the connection formula.
    near_origin: f64,
    /// `g2 / Γ(1 + β)`.
    power: f64,
    inv_gamma: f64,
    direct: [f64; SERIES_TERMS],
    connected: [f64; SERIES_TERMS],
}

const SERIES_TERMS: usize = 64;

impl FractionalKernel {
    pub fn new(hurst: f64) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::domain(format!("H must be in (1/2, 1), got {hurst}")));
        }
        let beta = hurst - 0.5;
        let inv_gamma = (-ln_gamma(hurst + 0.5)?).exp();
        let mut direct = [0.0; SERIES_TERMS];
        let mut connected = [0.0; SERIES_TERMS];
        direct[0] = 1.0;
        connected[0] = 1.0;
        for n in 1..SERIES_TERMS {
            let m = (n - 1) as f64;
            direct[n] = direct[n - 1] * (m - beta) / (m + 1.0 + beta);
            connected[n] = connected[n - 1] * (m - beta) / (m + 1.0 - 2.0 * beta);
        }
        Ok(Self {
            hurst,
            beta,
            near_origin: 0.5 * inv_gamma,
            power: gamma(-2.0 * beta)? / gamma(-beta)?,
            inv_gamma,
            direct,
            connected,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        if s > t {
            return Ok(0.0);
        }
        if !(s > 0.0) {
            return Err(Error::domain(format!(
                "fractional kernel undefined at s = {s} (z = 1 - t/s)"
            )));
        }
        if s == t {
            return Ok(0.0);
        }
        let x = s / t;
        let scaled = ((t - s) * t / s).powf(self.beta);
        if x >= 0.5 {
            Ok(scaled * horner(&self.direct, 1.0 - x) * self.inv_gamma)
        } else {
            Ok(self.near_origin * scaled * horner(&self.connected, x) + self.power * s.powf(self.beta))
        }
    }
}

/// `Σ coef[n] x^n` for `0 <= x <= 1/2`, even and odd parts in two chains.
///
/// With `|coef[n]| <= bound` the tail past `n` terms is below
/// `2 bound x^n`; the sum stops once that drops under `2^-56 bound`.
fn horner(coef: &[f64; SERIES_TERMS], x: f64) -> f64 {
    let terms = if x > 0.0 {
        let needed = (-57.0 * std::f64::consts::LN_2 / x.ln()).ceil() as usize;
        (needed + 1).next_multiple_of(2).min(SERIES_TERMS)
    } else {
        2
    };
    let x2 = x * x;
    let (mut even, mut odd) = (0.0, 0.0);
    for pair in coef[..terms].chunks_exact(2).rev() {
        even = even * x2 + pair[0];
        odd = odd * x2 + pair[1];
    }
    odd * x + even
}

/// Kernel given by values on a rectangular `(t, s)` grid, interpolated
/// bilinearly and forced to zero above the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedKernel {
    ts: Vec<f64>,
    ss: Vec<f64>,
    /// Row-major: `values[i * ss.len() + j] = K(ts[i], ss[j])`.
    values: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(ts: Vec<f64>, ss: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let k = Self { ts, ss, values };
        k.validate()?;
        Ok(k)
    }

    /// Tabulates another kernel on the given grid.
    pub fn from_fn<F: Fn(f64, f64) -> Result<f64>>(ts: Vec<f64>, ss: Vec<f64>, f: F) -> Result<Self> {
        let mut values = Vec::with_capacity(ts.len() * ss.len());
        for &t in &ts {
            for &s in &ss {
                values.push(if s > t { 0.0 } else { f(t, s)? });
            }
        }
        Self::new(ts, ss, values)
    }

    fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.ts) || !increasing(&self.ss) {
            return Err(Error::domain("tabulated grids need at least two increasing nodes"));
        }
        if self.ss[0] < 0.0 {
            return Err(Error::domain("tabulated s grid must be nonnegative"));
        }
        if self.values.len() != self.ts.len() * self.ss.len() {
            return Err(Error::domain("tabulated values do not match grid size"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("tabulated values must be finite"));
        }
        for (i, &t) in self.ts.iter().enumerate() {
            for (j, &s) in self.ss.iter().enumerate() {
                if s > t && self.values[i * self.ss.len() + j] != 0.0 {
                    return Err(Error::domain(format!(
                        "tabulated kernel not triangular: K({t}, {s}) != 0"
                    )));
                }
            }
        }
        Ok(())
    }

    fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
        let n = grid.len();
        if x < grid[0] || x > grid[n - 1] {
            return None;
        }
        let i = grid.partition_point(|&g| g <= x).clamp(1, n - 1) - 1;
        Some((i, (x - grid[i]) / (grid[i + 1] - grid[i])))
    }

    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        if s > t {
            return Ok(0.0);
        }
        let (Some((i, u)), Some((j, v))) = (Self::locate(&self.ts, t), Self::locate(&self.ss, s))
        else {
            return Err(Error::domain(format!(
                "({t}, {s}) outside the tabulated grid"
            )));
        };
        let m = self.ss.len();
        let at = |a: usize, b: usize| self.values[a * m + b];
        Ok((1.0 - u) * (1.0 - v) * at(i, j)
            + u * (1.0 - v) * at(i + 1, j)
            + (1.0 - u) * v * at(i, j + 1)
            + u * v * at(i + 1, j + 1))
    }

    fn diagonal_class(&self) -> DiagonalClass {
        let diag: Vec<f64> = self
            .ts
            .iter()
            .filter(|&&t| t >= self.ss[0] && t <= *self.ss.last().unwrap())
            .filter_map(|&t| self.eval(t, t).ok())
            .collect();
        if diag.iter().any(|v| !v.is_finite()) {
            DiagonalClass::Irregular
        } else if diag.iter().all(|&v| v == 0.0) {
            DiagonalClass::ContinuousPaths
        } else {
            DiagonalClass::CadlagPaths
        }
    }

    /// Reads rows `t,s,value`. Entries above the diagonal may be omitted.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let rows = read_csv_rows(input, &["t", "s", "value"])?;
        let mut ts: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut ss: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        for v in [&mut ts, &mut ss] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let m = ss.len();
        let mut values = vec![f64::NAN; ts.len() * m];
        for r in &rows {
            let i = ts.partition_point(|&x| x < r[0]);
            let j = ss.partition_point(|&x| x < r[1]);
            values[i * m + j] = r[2];
        }
        for (i, &t) in ts.iter().enumerate() {
            for (j, &s) in ss.iter().enumerate() {
                let v = &mut values[i * m + j];
                if v.is_nan() {
                    if s > t {
                        *v = 0.0;
                    } else {
                        return Err(Error::Parse(format!("missing kernel value at ({t}, {s})")));
                    }
                }
            }
        }
        Self::new(ts, ss, values)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,s,value")?;
        let m = self.ss.len();
        for (i, &t) in self.ts.iter().enumerate() {
            for (j, &s) in self.ss.iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(t), fmt_f64(s), fmt_f64(self.values[i * m + j]))?;
            }
        }
        Ok(())
    }
}
