//! One-dimensional quadrature: globally adaptive Gauss–Kronrod (7/15) and
//! fixed Gauss–Legendre rules, plus a power substitution for integrands
//! with an integrable algebraic singularity at the left end point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// Absolute/relative stopping rule for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_segments: usize,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self {
            abs,
            rel,
            max_segments: 4000,
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-13, 1e-11)
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = WGK[7] * fc;
    let mut res_g = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        res_k += w * pair;
        if j % 2 == 1 {
            res_g += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: res_k * half,
        error: ((res_k - res_g) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]` by globally adaptive Gauss–Kronrod bisection.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::domain(format!("integration bounds [{a}, {b}] not finite")));
    }
    let first = kronrod(&f, a, b);
    if !first.value.is_finite() {
        return Err(Error::NonConvergence {
            what: "adaptive quadrature",
            detail: format!("non-finite integrand on [{a}, {b}]"),
        });
    }
    let mut heap = BinaryHeap::new();
    let mut value = first.value;
    let mut error = first.error;
    heap.push(first);
    loop {
        if error <= tol.abs.max(tol.rel * value.abs()) {
            break;
        }
        if heap.len() >= tol.max_segments {
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                detail: format!(
                    "error estimate {error:e} after {} segments on [{a}, {b}]",
                    heap.len()
                ),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at double precision; accept what we have
            heap.push(Segment { error: 0.0, ..worst });
            error -= worst.error;
            continue;
        }
        let left = kronrod(&f, worst.a, mid);
        let right = kronrod(&f, mid, worst.b);
        if !(left.value.is_finite() && right.value.is_finite()) {
            return Err(Error::NonConvergence {
                what: "adaptive quadrature",
                detail: format!("non-finite integrand near {mid}"),
            });
        }
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // re-sum to shed the running-update rounding
    Ok(heap.iter().map(|s| s.value).sum())
}

/// Integrates `g` over `[0, t]` where `g(s) ~ s^{-alpha}` near the origin
/// (`alpha < 1`), using `s = t v^p` with `p = 1/(1 - alpha)` so that the
/// transformed integrand is bounded.
pub fn integrate_from_origin<F: Fn(f64) -> f64>(
    g: F,
    t: f64,
    alpha: f64,
    tol: Tolerance,
) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    if alpha >= 1.0 {
        return Err(Error::domain(format!(
            "origin exponent {alpha} is not integrable"
        )));
    }
    let alpha = alpha.max(0.0);
    if alpha == 0.0 {
        return integrate(g, 0.0, t, tol);
    }
    let p = 1.0 / (1.0 - alpha);
    integrate(
        |v: f64| {
            if v <= 0.0 {
                return 0.0;
            }
            let vp = v.powf(p);
            t * p * (vp / v) * g(t * vp)
        },
        0.0,
        1.0,
        tol,
    )
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { nodes, weights }
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let h = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(a + h * x))
            .sum::<f64>()
            * h
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 12-point rule used for singular cells.
pub fn gl12() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(12))
}
