//! Gamma and Gauss hypergeometric functions for real arguments.
//!
//! `hyp2f1` evaluates the Euler integral representation by adaptive
//! quadrature. [`Hyp2F1Series`] is an independent route (Pfaff transform,
//! Gauss series, and the `w -> 1 - w` connection formula on the upper half
//! of the unit interval) which is much cheaper per call and is what the
//! kernel evaluators use in bulk.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};

/// Parameters of `F(a, b; c; z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyp2F1Params {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub z: f64,
}

impl Hyp2F1Params {
    pub fn new(a: f64, b: f64, c: f64, z: f64) -> Self {
        Self { a, b, c, z }
    }

    pub fn validate(&self) -> Result<()> {
        let Self { a, b, c, z } = *self;
        if !(a.is_finite() && b.is_finite() && c.is_finite() && z.is_finite()) {
            return Err(Error::domain(format!("non-finite 2F1 parameters {self:?}")));
        }
        if is_nonpositive_integer(c) {
            return Err(Error::domain(format!("c = {c} is a non-positive integer")));
        }
        if z >= 1.0 {
            return Err(Error::domain(format!("z = {z} outside (-inf, 1)")));
        }
        Ok(())
    }
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.round()
}

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-9
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// `Γ(x)` for any real `x` that is not a pole.
pub fn gamma(x: f64) -> Result<f64> {
    if is_nonpositive_integer(x) || !x.is_finite() {
        return Err(Error::domain(format!("gamma has a pole at {x}")));
    }
    if x > 0.0 {
        return Ok(ln_gamma(x)?.exp());
    }
    // reflection
    Ok(PI / ((PI * x).sin() * ln_gamma(1.0 - x)?.exp()))
}

/// `1/Γ(x)`, zero at the poles.
pub fn recip_gamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        return 0.0;
    }
    if x > 0.0 {
        return (-statrs::function::gamma::ln_gamma(x)).exp();
    }
    (PI * x).sin() * statrs::function::gamma::ln_gamma(1.0 - x).exp() / PI
}

/// `F(a, b; c; z)` from the Euler integral
/// `Γ(c)/(Γ(b)Γ(c-b)) ∫_0^1 u^{b-1}(1-u)^{c-b-1}(1-zu)^{-a} du`.
///
/// `a` and `b` are swapped when needed so that `c > b > 0`. Both end-point
/// singularities are removed by power substitutions on the two halves of
/// the unit interval.
pub fn hyp2f1(p: Hyp2F1Params) -> Result<f64> {
    p.validate()?;
    if p.z == 0.0 {
        return Ok(1.0);
    }
    let (a, b) = if p.c > p.b && p.b > 0.0 {
        (p.a, p.b)
    } else if p.c > p.a && p.a > 0.0 {
        (p.b, p.a)
    } else {
        return Err(Error::domain(format!(
            "no admissible Euler integral for {p:?}: need c > b > 0 or c > a > 0"
        )));
    };
    let c = p.c;
    let z = p.z;
    let d = c - b;
    let tol = Tolerance::new(1e-15, 1e-13);
    // u = v^{1/b} on [0, 1/2]
    let left = quad::integrate(
        |v: f64| {
            let u = v.powf(1.0 / b);
            (1.0 - u).powf(d - 1.0) * (1.0 - z * u).powf(-a) / b
        },
        0.0,
        0.5f64.powf(b),
        tol,
    )?;
    // 1 - u = w^{1/(c-b)} on [1/2, 1]
    let right = quad::integrate(
        |w: f64| {
            let u = 1.0 - w.powf(1.0 / d);
            u.powf(b - 1.0) * (1.0 - z * u).powf(-a) / d
        },
        0.0,
        0.5f64.powf(d),
        tol,
    )?;
    let log_pre = ln_gamma(c)? - ln_gamma(b)? - ln_gamma(d)?;
    Ok(log_pre.exp() * (left + right))
}

/// `F(a, b; c; z)` through the series route; see [`Hyp2F1Series`].
pub fn hyp2f1_series(p: Hyp2F1Params) -> Result<f64> {
    Hyp2F1Series::new(p.a, p.b, p.c)?.eval(p.z)
}

const SERIES_MAX_TERMS: usize = 200_000;

fn gauss_series(a: f64, b: f64, c: f64, x: f64) -> Result<f64> {
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 0..SERIES_MAX_TERMS {
        let nf = n as f64;
        let num = (a + nf) * (b + nf);
        if num == 0.0 {
            return Ok(sum);
        }
        let ratio = num / ((c + nf) * (nf + 1.0)) * x;
        term *= ratio;
        sum += term;
        let r = ratio.abs();
        if r < 1.0 && term.abs() * r / (1.0 - r) <= 1e-17 * sum.abs() {
            return Ok(sum);
        }
    }
    Err(Error::NonConvergence {
        what: "Gauss series",
        detail: format!("F({a}, {b}; {c}; {x}) after {SERIES_MAX_TERMS} terms"),
    })
}

/// Evaluation of `F(A, B; C; w)` for `w` in `[0, 1)`.
#[derive(Debug, Clone, Copy)]
struct UnitInterval {
    a: f64,
    b: f64,
    c: f64,
    connection: Option<Connection>,
}

#[derive(Debug, Clone, Copy)]
struct Connection {
    delta: f64,
    g1: f64,
    g2: f64,
}

impl UnitInterval {
    fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let delta = c - a - b;
        let connection = if near_integer(delta) || is_nonpositive_integer(c) {
            None
        } else {
            let gc = gamma(c)?;
            Some(Connection {
                delta,
                g1: gc * gamma(delta)? * recip_gamma(c - a) * recip_gamma(c - b),
                g2: gc * gamma(-delta)? * recip_gamma(a) * recip_gamma(b),
            })
        };
        Ok(Self { a, b, c, connection })
    }

    fn eval(&self, w: f64) -> Result<f64> {
        match self.connection {
            Some(conn) if w > 0.5 => {
                let x = 1.0 - w;
                let mut v = 0.0;
                if conn.g1 != 0.0 {
                    v += conn.g1 * gauss_series(self.a, self.b, 1.0 - conn.delta, x)?;
                }
                if conn.g2 != 0.0 {
                    v += conn.g2
                        * x.powf(conn.delta)
                        * gauss_series(self.c - self.a, self.c - self.b, 1.0 + conn.delta, x)?;
                }
                Ok(v)
            }
            _ => gauss_series(self.a, self.b, self.c, w),
        }
    }
}

/// Prepared series evaluator for fixed `(a, b, c)`.
///
/// For `z < 0` the Pfaff transform
/// `F(a,b;c;z) = (1-z)^{-a'} F(a', c-b'; c; z/(z-1))` is applied with
/// `a' = min(a, b)`, so the series argument lies in `[0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct Hyp2F1Series {
    a: f64,
    b: f64,
    c: f64,
    pfaff_exponent: f64,
    pfaff: UnitInterval,
    direct: UnitInterval,
}

impl Hyp2F1Series {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        Hyp2F1Params::new(a, b, c, 0.0).validate()?;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Ok(Self {
            a,
            b,
            c,
            pfaff_exponent: lo,
            pfaff: UnitInterval::new(lo, c - hi, c)?,
            direct: UnitInterval::new(a, b, c)?,
        })
    }

    pub fn eval(&self, z: f64) -> Result<f64> {
        Hyp2F1Params::new(self.a, self.b, self.c, z).validate()?;
        if self.a == 0.0 || self.b == 0.0 || z == 0.0 {
            return Ok(1.0);
        }
        if z < 0.0 {
            let w = z / (z - 1.0);
            Ok((1.0 - z).powf(-self.pfaff_exponent) * self.pfaff.eval(w)?)
        } else {
            self.direct.eval(z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_identities() {
        assert_abs_diff_eq!(ln_gamma(1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(0.5).unwrap(), 0.5 * PI.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(5.0).unwrap(), 24f64.ln(), epsilon = 1e-12);
        assert!(ln_gamma(0.0).is_err());
        assert!(ln_gamma(-1.5).is_err());
    }

    #[test]
    fn gamma_reflection() {
        // Γ(-1/2) = -2√π
        assert_abs_diff_eq!(gamma(-0.5).unwrap(), -2.0 * PI.sqrt(), epsilon = 1e-12);
        assert_eq!(recip_gamma(-3.0), 0.0);
        assert!(gamma(-2.0).is_err());
        assert_abs_diff_eq!(recip_gamma(-0.5) * gamma(-0.5).unwrap(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn hyp2f1_at_origin_is_one() {
        assert_eq!(hyp2f1(Hyp2F1Params::new(0.2, -0.2, 1.2, 0.0)).unwrap(), 1.0);
        assert_eq!(hyp2f1_series(Hyp2F1Params::new(0.3, 0.7, 2.5, 0.0)).unwrap(), 1.0);
    }

    #[test]
    fn log_identity() {
        let expected = 2.0 * 2f64.ln();
        let p = Hyp2F1Params::new(1.0, 1.0, 2.0, 0.5);
        assert_abs_diff_eq!(hyp2f1(p).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(hyp2f1_series(p).unwrap(), expected, epsilon = 1e-12);
        // negative argument: -ln(1-z)/z
        let z = -3.0;
        let p = Hyp2F1Params::new(1.0, 1.0, 2.0, z);
        let expected = -(1.0 - z).ln() / z;
        assert_abs_diff_eq!(hyp2f1(p).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(hyp2f1_series(p).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_parameter_gives_one() {
        let p = Hyp2F1Params::new(0.0, 0.3, 1.1, -5.0);
        assert_eq!(hyp2f1_series(p).unwrap(), 1.0);
        assert_abs_diff_eq!(hyp2f1(p).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(hyp2f1(Hyp2F1Params::new(0.2, 0.3, -2.0, -1.0)).is_err());
        assert!(hyp2f1(Hyp2F1Params::new(0.2, 0.3, 1.0, 1.0)).is_err());
        // neither (a, b) nor (b, a) admits c > b > 0
        assert!(matches!(
            hyp2f1(Hyp2F1Params::new(-0.2, -0.3, 1.0, -1.0)),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn symmetric_in_a_b(h in 0.55f64..0.95, z in -100.0f64..0.0) {
            let p = Hyp2F1Params::new(h - 0.5, 0.5 - h, h + 0.5, z);
            let q = Hyp2F1Params::new(0.5 - h, h - 0.5, h + 0.5, z);
            prop_assert!((hyp2f1(p).unwrap() - hyp2f1(q).unwrap()).abs() < 1e-9);
            prop_assert!((hyp2f1_series(p).unwrap() - hyp2f1_series(q).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn routes_agree_on_kernel_family(h in 0.55f64..0.95, z in -100.0f64..0.0) {
            let p = Hyp2F1Params::new(h - 0.5, 0.5 - h, h + 0.5, z);
            let q = hyp2f1(p).unwrap();
            let s = hyp2f1_series(p).unwrap();
            prop_assert!((q - s).abs() < 1e-8, "quadrature {} series {}", q, s);
        }

        #[test]
        fn routes_agree_inside_unit_interval(
            a in 0.1f64..2.0, b in 0.1f64..1.5, extra in 0.1f64..2.0, z in 0.0f64..0.9
        ) {
            let p = Hyp2F1Params::new(a, b, b + extra, z);
            let q = hyp2f1(p).unwrap();
            let s = hyp2f1_series(p).unwrap();
            prop_assert!((q - s).abs() < 1e-8 * q.abs().max(1.0), "quadrature {} series {}", q, s);
        }
    }
}
