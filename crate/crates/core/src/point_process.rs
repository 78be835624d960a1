//! Marked Poisson processes with intensity `λ(s) ds η(dz)`: simulation by
//! thinning, compensators, and CSV serialization of sample paths.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_rows};
use crate::phi::PhiFunction;

/// Time intensity `λ(s)` of the jump times.
#[derive(Debug, Clone, PartialEq)]
pub enum IntensitySpec {
    Constant {
        base_rate: f64,
    },
    /// `λ(s) = base_rate · (1 + θ φ(s))`.
    ScaledByPhi {
        base_rate: f64,
        theta: f64,
        phi: PhiFunction,
    },
}

impl IntensitySpec {
    pub fn constant(base_rate: f64) -> Result<Self> {
        let spec = IntensitySpec::Constant { base_rate };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scaled_by_phi(base_rate: f64, theta: f64, phi: PhiFunction) -> Result<Self> {
        let spec = IntensitySpec::ScaledByPhi {
            base_rate,
            theta,
            phi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let rate = self.base_rate();
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("base rate must be positive, got {rate}")));
        }
        if let IntensitySpec::ScaledByPhi { theta, phi, .. } = self {
            if !(*theta >= 0.0 && theta.is_finite()) {
                return Err(Error::domain(format!("theta must be >= 0, got {theta}")));
            }
            if !phi.is_nonnegative() {
                return Err(Error::domain("phi must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn base_rate(&self) -> f64 {
        match self {
            IntensitySpec::Constant { base_rate } | IntensitySpec::ScaledByPhi { base_rate, .. } => {
                *base_rate
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            IntensitySpec::Constant { .. } => true,
            IntensitySpec::ScaledByPhi { theta, .. } => *theta == 0.0,
        }
    }

    /// `λ(s)`.
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            IntensitySpec::Constant { base_rate } => *base_rate,
            IntensitySpec::ScaledByPhi {
                base_rate,
                theta,
                phi,
            } => {
                if *theta == 0.0 {
                    *base_rate
                } else {
                    base_rate * (1.0 + theta * phi.eval(s))
                }
            }
        }
    }

    /// `α` such that `λ(s) = O(s^{-α})` at the origin.
    pub fn origin_exponent(&self) -> f64 {
        match self {
            IntensitySpec::ScaledByPhi { theta, phi, .. } if *theta > 0.0 => phi.origin_exponent(),
            _ => 0.0,
        }
    }

    /// `sup λ` over `[a, b]`, infinite when `λ` is unbounded there.
    pub fn sup_on(&self, a: f64, b: f64) -> f64 {
        match self {
            IntensitySpec::Constant { base_rate } => *base_rate,
            IntensitySpec::ScaledByPhi {
                base_rate,
                theta,
                phi,
            } => base_rate * (1.0 + theta * phi.sup_on(a, b)),
        }
    }
}

/// `∫_0^t λ(s) ds`.
pub fn integrated_intensity(intensity: &IntensitySpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("integrated intensity needs t >= 0, got {t}")));
    }
    Ok(match intensity {
        IntensitySpec::Constant { base_rate } => base_rate * t,
        IntensitySpec::ScaledByPhi {
            base_rate,
            theta,
            phi,
        } => {
            if *theta == 0.0 {
                base_rate * t
            } else {
                base_rate * (t + theta * phi.integral(t))
            }
        }
    })
}

/// Law `η` of the (positive, scalar) marks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkDistributionSpec {
    Unit,
    Exponential { mean: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl MarkDistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarkDistributionSpec::Unit => Ok(()),
            MarkDistributionSpec::Exponential { mean } if mean > 0.0 && mean.is_finite() => Ok(()),
            MarkDistributionSpec::LogNormal { mu, sigma }
                if mu.is_finite() && sigma >= 0.0 && sigma.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::domain(format!("invalid mark distribution {other:?}"))),
        }
    }

    /// First moment `m₁ = ∫ z η(dz)`.
    pub fn mean(&self) -> f64 {
        match *self {
            MarkDistributionSpec::Unit => 1.0,
            MarkDistributionSpec::Exponential { mean } => mean,
            MarkDistributionSpec::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            MarkDistributionSpec::Unit => 0.0,
            MarkDistributionSpec::Exponential { mean } => mean * mean,
            MarkDistributionSpec::LogNormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (s2.exp() - 1.0) * (2.0 * mu + s2).exp()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            MarkDistributionSpec::Unit => 1.0,
            MarkDistributionSpec::Exponential { mean } => {
                Exp::new(1.0 / mean).expect("validated mean").sample(rng)
            }
            MarkDistributionSpec::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated sigma").sample(rng)
            }
        }
    }
}

/// One realization of the marked point process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPath {
    jump_times: Vec<f64>,
    marks: Vec<f64>,
    horizon: f64,
}

impl MarkedPath {
    pub fn new(jump_times: Vec<f64>, marks: Vec<f64>, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        if jump_times.len() != marks.len() {
            return Err(Error::domain(format!(
                "{} jump times but {} marks",
                jump_times.len(),
                marks.len()
            )));
        }
        let mut prev = 0.0;
        for &t in &jump_times {
            if !(t > prev) || t > horizon {
                return Err(Error::domain(format!(
                    "jump times must satisfy 0 < T_1 < T_2 < ... <= horizon; got {t} after {prev}"
                )));
            }
            prev = t;
        }
        if let Some(z) = marks.iter().find(|z| !(**z > 0.0 && z.is_finite())) {
            return Err(Error::domain(format!("marks must be positive, got {z}")));
        }
        Ok(Self {
            jump_times,
            marks,
            horizon,
        })
    }

    pub fn empty(horizon: f64) -> Result<Self> {
        Self::new(Vec::new(), Vec::new(), horizon)
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// Number of jumps in `[0, t]`.
    pub fn count_until(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    /// Iterator over `(T_n, Z_n)` with `T_n <= t`.
    pub fn jumps_until(&self, t: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.count_until(t);
        self.jump_times[..n]
            .iter()
            .copied()
            .zip(self.marks[..n].iter().copied())
    }

    /// Writes the path as CSV with header `t,z`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,z")?;
        for (t, z) in self.jump_times.iter().zip(&self.marks) {
            writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*z))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, horizon: f64) -> Result<Self> {
        let rows = read_csv_rows(input, &["t", "z"])?;
        let (times, marks) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::new(times, marks, horizon)
    }
}

/// Seed used for replica `index` of a run seeded with `seed`.
pub fn replica_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const THINNING_BLOCKS: usize = 64;
// Below this integrated intensity, the chance of any event is under
// double-precision resolution.
const NEGLIGIBLE_MASS: f64 = 1e-16;

/// Simulates a path on `[0, horizon]` by thinning against piecewise
/// constant bounds of `λ`.
pub fn simulate(
    intensity: &IntensitySpec,
    marks: &MarkDistributionSpec,
    horizon: f64,
    seed: u64,
) -> Result<MarkedPath> {
    simulate_with_rng(intensity, marks, horizon, &mut rng_from_seed(seed))
}

pub fn simulate_with_rng<R: Rng + ?Sized>(
    intensity: &IntensitySpec,
    marks: &MarkDistributionSpec,
    horizon: f64,
    rng: &mut R,
) -> Result<MarkedPath> {
    intensity.validate()?;
    marks.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    let blocks = thinning_blocks(intensity, horizon)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (a, b, bound) in blocks {
        let gap = Exp::new(bound).map_err(|e| Error::domain(format!("rate bound {bound}: {e}")))?;
        let mut t = a;
        loop {
            t += gap.sample(rng);
            if t > b {
                break;
            }
            let u: f64 = rng.random();
            if u * bound <= intensity.eval(t) {
                times.push(t);
                values.push(marks.sample(rng));
            }
        }
    }
    MarkedPath::new(times, values, horizon)
}

/// `(start, end, λ_max)` triples covering `[0, horizon]` in increasing order.
fn thinning_blocks(intensity: &IntensitySpec, horizon: f64) -> Result<Vec<(f64, f64, f64)>> {
    if let IntensitySpec::Constant { base_rate } = intensity {
        return Ok(vec![(0.0, horizon, *base_rate)]);
    }
    let width = horizon / THINNING_BLOCKS as f64;
    let mut blocks = Vec::with_capacity(THINNING_BLOCKS + 64);
    let first_bound = intensity.sup_on(0.0, width);
    if first_bound.is_finite() {
        blocks.push((0.0, width, first_bound));
    } else {
        // geometric refinement toward the singular origin
        let mut edges = vec![width];
        let mut e = width;
        while integrated_intensity(intensity, e)? > NEGLIGIBLE_MASS {
            e *= 0.5;
            if e < f64::MIN_POSITIVE {
                return Err(Error::domain("cannot bound the intensity near the origin"));
            }
            edges.push(e);
        }
        for w in edges.windows(2).rev() {
            let (hi, lo) = (w[0], w[1]);
            blocks.push((lo, hi, checked_bound(intensity, lo, hi)?));
        }
    }
    for k in 1..THINNING_BLOCKS {
        let a = width * k as f64;
        let b = if k + 1 == THINNING_BLOCKS {
            horizon
        } else {
            width * (k + 1) as f64
        };
        blocks.push((a, b, checked_bound(intensity, a, b)?));
    }
    Ok(blocks)
}

fn checked_bound(intensity: &IntensitySpec, a: f64, b: f64) -> Result<f64> {
    let bound = intensity.sup_on(a, b);
    if bound.is_finite() && bound > 0.0 {
        Ok(bound)
    } else {
        Err(Error::domain(format!(
            "no finite intensity bound on [{a}, {b}]"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vanishing_rate_gives_empty_path() {
        let i = IntensitySpec::constant(1e-9).unwrap();
        let p = simulate(&i, &MarkDistributionSpec::Unit, 1.0, 7).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(IntensitySpec::constant(0.0).is_err());
    }

    #[test]
    fn same_seed_same_path() {
        let i = IntensitySpec::constant(3.0).unwrap();
        let m = MarkDistributionSpec::Exponential { mean: 2.0 };
        let a = simulate(&i, &m, 50.0, 42).unwrap();
        let b = simulate(&i, &m, 50.0, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate(&i, &m, 50.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_rate_count() {
        let i = IntensitySpec::constant(2.0).unwrap();
        let p = simulate(&i, &MarkDistributionSpec::Unit, 1000.0, 1).unwrap();
        let rate = p.len() as f64 / 1000.0;
        assert!((rate - 2.0).abs() <= 3.0 * (2.0f64 / 1000.0).sqrt(), "rate {rate}");
    }

    #[test]
    fn scaled_rate_count() {
        let i = IntensitySpec::scaled_by_phi(1.0, 1.0, PhiFunction::constant(1.0)).unwrap();
        let p = simulate(&i, &MarkDistributionSpec::Unit, 1000.0, 5).unwrap();
        let rate = p.len() as f64 / 1000.0;
        assert!((rate - 2.0).abs() <= 3.0 * (2.0f64 / 1000.0).sqrt(), "rate {rate}");
    }

    #[test]
    fn singular_intensity_is_simulated() {
        let phi = PhiFunction::fractional(0.7, 1.0).unwrap();
        let i = IntensitySpec::scaled_by_phi(1.0, 1.0, phi).unwrap();
        let p = simulate(&i, &MarkDistributionSpec::Unit, 10.0, 3).unwrap();
        assert!(!p.is_empty());
        assert!(p.jump_times()[0] > 0.0);
    }

    #[test]
    fn integrated_intensity_examples() {
        let c = IntensitySpec::constant(3.0).unwrap();
        assert_eq!(integrated_intensity(&c, 2.0).unwrap(), 6.0);
        assert_eq!(integrated_intensity(&c, 0.0).unwrap(), 0.0);
        assert!(integrated_intensity(&c, -1.0).is_err());
        // φ(s) = 1 + s on a grid
        let phi = PhiFunction::grid(vec![0.0, 2.0], vec![1.0, 3.0]).unwrap();
        let s = IntensitySpec::scaled_by_phi(1.0, 0.5, phi).unwrap();
        assert_relative_eq!(integrated_intensity(&s, 2.0).unwrap(), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn path_validation() {
        assert!(MarkedPath::new(vec![1.0, 0.5], vec![1.0, 1.0], 2.0).is_err());
        assert!(MarkedPath::new(vec![1.0], vec![-1.0], 2.0).is_err());
        assert!(MarkedPath::new(vec![3.0], vec![1.0], 2.0).is_err());
        assert!(MarkedPath::new(vec![0.0], vec![1.0], 2.0).is_err());
        let p = MarkedPath::new(vec![0.5, 1.0, 1.5], vec![1.0, 2.0, 3.0], 2.0).unwrap();
        assert_eq!(p.count_until(1.0), 2);
        assert_eq!(p.count_until(0.1), 0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let i = IntensitySpec::constant(5.0).unwrap();
        let m = MarkDistributionSpec::LogNormal { mu: 0.1, sigma: 0.4 };
        let p = simulate(&i, &m, 10.0, 11).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,z\n"));
        let q = MarkedPath::read_csv(buf.as_slice(), 10.0).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn lognormal_mean() {
        let m = MarkDistributionSpec::LogNormal { mu: 0.0, sigma: 1.0 };
        assert_relative_eq!(m.mean(), 0.5f64.exp(), max_relative = 1e-15);
    }
}
