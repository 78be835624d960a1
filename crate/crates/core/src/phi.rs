//! The calibration function `φ`, solution of
//! `m₁ ∫_0^t K(t, s) φ(s) λ(s) ds = t`.
//!
//! For the fractional kernel with constant intensity `φ` is known in
//! closed form. For any other kernel it is obtained from the first-kind
//! Volterra equation by product integration with forward substitution.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_rows};
use crate::kernels::KernelSpec;
use crate::point_process::IntensitySpec;
use crate::quad::{self, GaussLegendre, Tolerance};
use crate::special::ln_gamma;

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// `intercept + slope · s`
    Affine { intercept: f64, slope: f64 },
    /// `coefficient · s^{1/2 - H}`
    Fractional { hurst: f64, rate: f64, coefficient: f64 },
    /// Linear interpolation between nodes, constant beyond the last node and
    /// `values[0] · (s / nodes[0])^{-origin_exponent}` below the first.
    Grid {
        nodes: Vec<f64>,
        values: Vec<f64>,
        origin_exponent: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiFunction {
    repr: Repr,
}

impl PhiFunction {
    /// `φ(s) = Γ(3/2 - H) / Γ(2 - 2H) · s^{1/2 - H} / λ`.
    pub fn fractional(hurst: f64, rate: f64) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::domain(format!("phi needs H in (1/2, 1), got {hurst}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("phi needs lambda > 0, got {rate}")));
        }
        let coefficient = (ln_gamma(1.5 - hurst)? - ln_gamma(2.0 - 2.0 * hurst)?).exp() / rate;
        Ok(Self {
            repr: Repr::Fractional {
                hurst,
                rate,
                coefficient,
            },
        })
    }

    pub fn grid(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::grid_with_origin_exponent(nodes, values, 0.0)
    }

    pub fn grid_with_origin_exponent(
        nodes: Vec<f64>,
        values: Vec<f64>,
        origin_exponent: f64,
    ) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != values.len() {
            return Err(Error::domain("phi grid needs equal, nonzero numbers of nodes and values"));
        }
        if nodes[0] < 0.0 || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("phi grid nodes must be nonnegative and increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("phi grid values must be finite"));
        }
        if !(0.0..1.0).contains(&origin_exponent) || (origin_exponent > 0.0 && nodes[0] == 0.0) {
            return Err(Error::domain(format!("bad origin exponent {origin_exponent}")));
        }
        Ok(Self {
            repr: Repr::Grid {
                nodes,
                values,
                origin_exponent,
            },
        })
    }

    pub fn constant(value: f64) -> Self {
        Self::affine(value, 0.0)
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        Self {
            repr: Repr::Affine { intercept, slope },
        }
    }

    pub fn hurst(&self) -> Option<f64> {
        match self.repr {
            Repr::Fractional { hurst, .. } => Some(hurst),
            _ => None,
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self.repr, Repr::Grid { .. })
    }

    pub fn eval(&self, s: f64) -> f64 {
        match &self.repr {
            Repr::Affine { intercept, slope } => intercept + slope * s,
            Repr::Fractional {
                hurst, coefficient, ..
            } => coefficient * s.powf(0.5 - hurst),
            Repr::Grid {
                nodes,
                values,
                origin_exponent,
            } => {
                let n = nodes.len();
                if s <= nodes[0] {
                    if *origin_exponent == 0.0 {
                        values[0]
                    } else {
                        values[0] * (s / nodes[0]).powf(-origin_exponent)
                    }
                } else if s >= nodes[n - 1] {
                    values[n - 1]
                } else {
                    let i = nodes.partition_point(|&x| x <= s) - 1;
                    let w = (s - nodes[i]) / (nodes[i + 1] - nodes[i]);
                    values[i] + w * (values[i + 1] - values[i])
                }
            }
        }
    }

    /// `∫_0^t φ(s) ds`, exact for both representations.
    pub fn integral(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Affine { intercept, slope } => intercept * t + 0.5 * slope * t * t,
            Repr::Fractional {
                hurst, coefficient, ..
            } => {
                let p = 1.5 - hurst;
                coefficient * t.powf(p) / p
            }
            Repr::Grid {
                nodes,
                values,
                origin_exponent,
            } => {
                let n0 = nodes[0];
                let head = |x: f64| {
                    if *origin_exponent == 0.0 {
                        values[0] * x
                    } else {
                        let p = 1.0 - origin_exponent;
                        values[0] * n0.powf(*origin_exponent) * x.powf(p) / p
                    }
                };
                if t <= n0 {
                    return head(t);
                }
                let mut total = head(n0);
                for i in 0..nodes.len() - 1 {
                    let (a, b) = (nodes[i], nodes[i + 1]);
                    if t <= a {
                        return total;
                    }
                    let hi = t.min(b);
                    let (va, vb) = (values[i], self.eval(hi));
                    total += 0.5 * (va + vb) * (hi - a);
                    if t <= b {
                        return total;
                    }
                }
                total + values[values.len() - 1] * (t - nodes[nodes.len() - 1])
            }
        }
    }

    /// `∫_0^t φ(s) λ(s) ds`: exact for constant `λ`, by quadrature
    /// otherwise.
    pub fn lambda_integral(&self, intensity: &IntensitySpec, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain(format!("integral needs t >= 0, got {t}")));
        }
        if intensity.is_constant() {
            return Ok(intensity.base_rate() * self.integral(t));
        }
        quad::integrate_from_origin(
            |s| self.eval(s) * intensity.eval(s),
            t,
            self.origin_exponent() + intensity.origin_exponent(),
            Tolerance::new(1e-14, 1e-11),
        )
    }

    /// `α` such that `φ(s) = O(s^{-α})` at the origin.
    pub fn origin_exponent(&self) -> f64 {
        match &self.repr {
            Repr::Affine { .. } => 0.0,
            Repr::Fractional { hurst, .. } => hurst - 0.5,
            Repr::Grid {
                origin_exponent, ..
            } => *origin_exponent,
        }
    }

    /// `sup φ` over `[a, b]`; infinite when unbounded there.
    pub fn sup_on(&self, a: f64, b: f64) -> f64 {
        match &self.repr {
            // decreasing in s
            Repr::Fractional { .. } => self.eval(a),
            Repr::Affine { .. } => self.eval(a).max(self.eval(b)),
            Repr::Grid { nodes, values, .. } => {
                let inner = nodes
                    .iter()
                    .zip(values)
                    .filter(|(&x, _)| x > a && x < b)
                    .map(|(_, &v)| v)
                    .fold(f64::NEG_INFINITY, f64::max);
                self.eval(a).max(self.eval(b)).max(inner)
            }
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match &self.repr {
            Repr::Fractional { coefficient, .. } => *coefficient >= 0.0,
            Repr::Affine { intercept, slope } => *intercept >= 0.0 && *slope >= 0.0,
            Repr::Grid { values, .. } => values.iter().all(|&v| v >= 0.0),
        }
    }

    /// Grid nodes and values; `None` for the closed form.
    pub fn grid_data(&self) -> Option<(&[f64], &[f64])> {
        match &self.repr {
            Repr::Grid { nodes, values, .. } => Some((nodes, values)),
            _ => None,
        }
    }

    /// Writes a grid `φ` as CSV `s,phi`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (nodes, values) = self
            .grid_data()
            .ok_or_else(|| Error::domain("only grid phi functions serialize to CSV"))?;
        writeln!(out, "s,phi")?;
        for (s, v) in nodes.iter().zip(values) {
            writeln!(out, "{},{}", fmt_f64(*s), fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let rows = read_csv_rows(input, &["s", "phi"])?;
        let (nodes, values) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::grid(nodes, values)
    }
}

/// Closed-form `φ` for the fractional kernel and constant intensity `λ`.
pub fn phi_fractional(hurst: f64, rate: f64) -> Result<PhiFunction> {
    PhiFunction::fractional(hurst, rate)
}

/// `φ` in closed form for constant intensity `λ` and mark mean `m₁`:
/// `1/(m₁λ)` for the indicator kernel, `(1 + a s)/(m₁λ)` for shot noise and
/// the fractional formula with rate `m₁λ`.
pub fn closed_form_phi(kernel: &KernelSpec, rate: f64, m1: f64) -> Result<PhiFunction> {
    kernel.validate()?;
    if !(rate > 0.0 && m1 > 0.0 && (rate * m1).is_finite()) {
        return Err(Error::domain(format!("need lambda > 0 and m1 > 0, got {rate}, {m1}")));
    }
    let scale = 1.0 / (m1 * rate);
    match kernel {
        KernelSpec::Indicator => Ok(PhiFunction::constant(scale)),
        KernelSpec::ExpShotNoise { a } => Ok(PhiFunction::affine(scale, a * scale)),
        KernelSpec::Fractional { hurst } => PhiFunction::fractional(*hurst, m1 * rate),
        KernelSpec::Tabulated(_) => Err(Error::domain(
            "no closed-form phi for a tabulated kernel; solve the Volterra equation instead",
        )),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VolterraOptions {
    /// Advertised relative accuracy of `m₁∫Kφλ` against `t`; the residual
    /// check fails above twice this value.
    pub residual_tolerance: f64,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        Self {
            residual_tolerance: 5e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolterraSolution {
    pub phi: PhiFunction,
    /// Equation nodes `t_i`.
    pub nodes: Vec<f64>,
    /// `m₁∫_0^{t_i} K(t_i,s) φ(s) λ(s) ds - t_i` for the returned `φ`.
    pub residuals: Vec<f64>,
    pub max_relative_residual: f64,
}

const DIAGONAL_FLOOR: f64 = 1e-14;
const END_TOLERANCE: Tolerance = Tolerance {
    abs: 0.0,
    rel: 1e-9,
    max_segments: 2000,
};

/// Solves for `φ` on `grid` and runs the residual check.
pub fn solve_phi_volterra(
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    grid: &[f64],
) -> Result<PhiFunction> {
    Ok(solve_phi_volterra_with(kernel, intensity, m1, grid, VolterraOptions::default())?.phi)
}

/// Product integration on the cells `[0, t_0], [t_0, t_1], …`: one unknown
/// per cell (reported at the cell midpoint), one equation per node, solved
/// by forward substitution. `φ` is constant on each cell except the first,
/// where it carries the kernel's origin singularity `s^{-α}`.
pub fn solve_phi_volterra_with(
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    grid: &[f64],
    options: VolterraOptions,
) -> Result<VolterraSolution> {
    let k = kernel.prepare()?;
    intensity.validate()?;
    if !(m1 > 0.0 && m1.is_finite()) {
        return Err(Error::domain(format!("m1 must be positive, got {m1}")));
    }
    if grid.is_empty() || !(grid[0] > 0.0) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::domain("Volterra grid must be increasing and start above 0"));
    }
    let alpha = k.origin_exponent();
    let beta = k.diagonal_exponent();
    let alpha_lambda = intensity.origin_exponent();
    if 2.0 * alpha + alpha_lambda >= 1.0 {
        return Err(Error::domain("kernel and intensity too singular at the origin"));
    }
    let n = grid.len();
    let edges: Vec<f64> = std::iter::once(0.0).chain(grid.iter().copied()).collect();
    let mids: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let g = |s: f64| m1 * intensity.eval(s);
    let basis = |s: f64| if alpha == 0.0 { 1.0 } else { s.powf(-alpha) };
    let kv = |t: f64, s: f64| k.eval(t, s).unwrap_or(f64::NAN);
    let regular = GaussLegendre::new(2);

    let mut coef = vec![0.0; n];
    for i in 0..n {
        let t = grid[i];
        let mut acc = 0.0;
        let diag;
        if i == 0 {
            let h = mids[0];
            diag = end_integral(|s| kv(t, s) * g(s) * basis(s), 0.0, h, 2.0 * alpha + alpha_lambda)?
                + end_integral(|s| kv(t, s) * g(s) * basis(s), t, h, -beta)?;
        } else {
            acc += coef[0]
                * end_integral(|s| kv(t, s) * g(s) * basis(s), 0.0, edges[1], 2.0 * alpha + alpha_lambda)?;
            for j in 1..i {
                let w = regular.integrate(|s| kv(t, s) * g(s), edges[j], edges[j + 1]);
                acc += coef[j] * w;
            }
            diag = end_integral(|s| kv(t, s) * g(s), t, edges[i], -beta)?;
        }
        let guard = m1 * kv(t, mids[i]) * intensity.eval(mids[i]) * (edges[i + 1] - edges[i]);
        if !(guard >= DIAGONAL_FLOOR) || !(diag.is_finite() && diag > DIAGONAL_FLOOR) {
            return Err(Error::SingularSystem {
                row: i,
                weight: if guard.is_finite() { guard.min(diag) } else { f64::NAN },
                threshold: DIAGONAL_FLOOR,
            });
        }
        if !acc.is_finite() {
            return Err(Error::NonConvergence {
                what: "Volterra weights",
                detail: format!("non-finite kernel weights in row {i}"),
            });
        }
        coef[i] = (t - acc) / diag;
    }

    let mut values = coef;
    values[0] *= basis(mids[0]);
    let phi = PhiFunction::grid_with_origin_exponent(mids, values, alpha)?;
    let residuals = volterra_residuals(kernel, intensity, m1, &phi, grid)?;
    let mut max_rel: f64 = 0.0;
    for (&t, &r) in grid.iter().zip(&residuals) {
        let rel = r.abs() / t;
        max_rel = max_rel.max(rel);
        if !(rel <= 2.0 * options.residual_tolerance) {
            return Err(Error::ResidualCheck {
                t,
                residual: r,
                limit: 2.0 * options.residual_tolerance * t,
            });
        }
    }
    Ok(VolterraSolution {
        phi,
        nodes: grid.to_vec(),
        residuals,
        max_relative_residual: max_rel,
    })
}

/// `∫` over the segment between `from` and `to` of `f`, where `f` behaves
/// like `|s - from|^{-exponent}` near `from`. Negative exponents describe
/// a vanishing power, positive ones an integrable singularity.
fn end_integral<F: Fn(f64) -> f64>(f: F, from: f64, to: f64, exponent: f64) -> Result<f64> {
    let len = to - from;
    let p = 1.0 / (1.0 - exponent);
    quad::integrate(
        |v| {
            if v <= 0.0 {
                return 0.0;
            }
            let vp = v.powf(p);
            len.abs() * p * vp / v * f(from + len * vp)
        },
        0.0,
        1.0,
        END_TOLERANCE,
    )
}

/// `m₁∫_0^{t} K(t,s) φ(s) λ(s) ds - t` at each `t` in `nodes`, integrating
/// piecewise between the breakpoints of a grid `φ`.
pub fn volterra_residuals(
    kernel: &KernelSpec,
    intensity: &IntensitySpec,
    m1: f64,
    phi: &PhiFunction,
    nodes: &[f64],
) -> Result<Vec<f64>> {
    let k = kernel.prepare()?;
    let kv = |t: f64, s: f64| k.eval(t, s).unwrap_or(f64::NAN);
    let g = |s: f64| m1 * intensity.eval(s) * phi.eval(s);
    let singular = k.origin_exponent() + phi.origin_exponent() + intensity.origin_exponent();
    let beta = k.diagonal_exponent();
    let gl = GaussLegendre::new(2);
    let (breaks, values) = phi.grid_data().unwrap_or((&[], &[]));
    let lo = breaks.partition_point(|&b| b <= 0.0);
    let mut out = Vec::with_capacity(nodes.len());
    for &t in nodes {
        let hi = breaks.partition_point(|&b| b < t).max(lo);
        let first = if hi > lo { breaks[lo] } else { 0.5 * t };
        let last = if hi > lo { breaks[hi - 1] } else { first };
        let mut total = end_integral(|s| kv(t, s) * g(s), 0.0, first, singular)?;
        for k in lo..hi.saturating_sub(1) {
            let (a, b) = (breaks[k], breaks[k + 1]);
            let (va, vb) = (values[k], values[k + 1]);
            // φ is linear on the cell; same interpolation as `eval` without the search
            let cell = |s: f64| m1 * intensity.eval(s) * (va + (s - a) / (b - a) * (vb - va));
            total += gl.integrate(|s| kv(t, s) * cell(s), a, b);
        }
        total += end_integral(|s| kv(t, s) * g(s), t, last, -beta)?;
        if !total.is_finite() {
            return Err(Error::NonConvergence {
                what: "Volterra residual",
                detail: format!("non-finite integral at t = {t}"),
            });
        }
        out.push(total - t);
    }
    Ok(out)
}
