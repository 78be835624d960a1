//! Weighted Monte-Carlo summaries and the weighted two-sample
//! Kolmogorov–Smirnov statistic.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// An estimate with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|self - other|` in units of the combined standard error.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let se = self.se.hypot(other.se);
        let diff = (self.value - other.value).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

/// Sample mean and `sd / √n`.
pub fn mean_estimate(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate {
        value: mean,
        se: (var / n).sqrt(),
    }
}

/// Self-normalized weighted mean `Σwx / Σw` with the delta-method standard
/// error `√(Σ w²(x - m)²) / Σw`.
pub fn weighted_mean_estimate(x: &[f64], w: &[f64]) -> Estimate {
    let total: f64 = w.iter().sum();
    let mean = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let spread: f64 = x
        .iter()
        .zip(w)
        .map(|(x, w)| (w * (x - mean)).powi(2))
        .sum();
    Estimate {
        value: mean,
        se: spread.sqrt() / total,
    }
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|w| w * w).sum();
    s * s / s2
}

pub fn rmse(estimates: &[f64], truth: f64) -> f64 {
    (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / estimates.len() as f64).sqrt()
}

pub fn mean_abs_error(estimates: &[f64], truth: f64) -> f64 {
    estimates.iter().map(|e| (e - truth).abs()).sum::<f64>() / estimates.len() as f64
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `sup_x |F_a(x) - F_b(x)|` for weighted empirical distribution functions.
pub fn weighted_ks(a: &[f64], wa: &[f64], b: &[f64], wb: &[f64]) -> f64 {
    let mut sa: Vec<(f64, f64)> = a.iter().copied().zip(wa.iter().copied()).collect();
    let mut sb: Vec<(f64, f64)> = b.iter().copied().zip(wb.iter().copied()).collect();
    sa.sort_by(|x, y| x.0.total_cmp(&y.0));
    sb.sort_by(|x, y| x.0.total_cmp(&y.0));
    ks_sorted(&sa, &sb)
}

fn ks_sorted(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let ta: f64 = a.iter().map(|p| p.1).sum();
    let tb: f64 = b.iter().map(|p| p.1).sum();
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        // step over every tie at x before comparing
        while i < a.len() && a[i].0 == x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == x {
            fb += b[j].1;
            j += 1;
        }
        d = d.max((fa / ta - fb / tb).abs());
    }
    d
}

/// Upper `level` quantile of the weighted KS statistic under the null that
/// both samples share the law represented by the weighted sample `(x, w)`.
///
/// Each resample draws a weighted sample by resampling `(x, w)` pairs
/// uniformly, and an unweighted sample by drawing from `x` with
/// probabilities proportional to `w`; both have the original size.
pub fn weighted_ks_null_quantile<R: Rng + ?Sized>(
    x: &[f64],
    w: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut R,
) -> Result<f64> {
    if x.is_empty() || x.len() != w.len() || resamples == 0 {
        return Err(Error::domain("bootstrap needs a nonempty weighted sample"));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ws: Vec<f64> = order.iter().map(|&i| w[i]).collect();
    let by_weight = WeightedIndex::new(&ws).map_err(|e| Error::domain(format!("bootstrap weights: {e}")))?;
    let n = xs.len();
    let mut stats = Vec::with_capacity(resamples);
    let mut ia = vec![0u32; n];
    let mut ib = vec![0u32; n];
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..resamples {
        for k in 0..n {
            ia[k] = rng.random_range(0..n) as u32;
            ib[k] = by_weight.sample(rng) as u32;
        }
        // indices index the sorted sample, so sorting them sorts the values
        ia.sort_unstable();
        ib.sort_unstable();
        a.clear();
        b.clear();
        a.extend(ia.iter().map(|&k| (xs[k as usize], ws[k as usize])));
        b.extend(ib.iter().map(|&k| (xs[k as usize], 1.0)));
        stats.push(ks_sorted(&a, &b));
    }
    stats.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&stats, level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unweighted_mean_and_se() {
        let e = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(e.value, 2.5);
        assert_relative_eq!(e.se, (5.0f64 / 3.0 / 4.0).sqrt());
    }

    #[test]
    fn unit_weights_reduce_to_plain_mean() {
        let x = [1.0, 4.0, 2.0];
        let e = weighted_mean_estimate(&x, &[1.0; 3]);
        assert_relative_eq!(e.value, 7.0 / 3.0);
        assert_eq!(effective_sample_size(&[2.0; 10]), 10.0);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn ks_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(weighted_ks(&a, &[1.0; 3], &a, &[1.0; 3]), 0.0);
        assert_relative_eq!(weighted_ks(&[0.0], &[1.0], &[1.0], &[1.0]), 1.0);
        // weights move mass: a puts 3/4 on 1.0
        assert_relative_eq!(weighted_ks(&[1.0, 2.0], &[3.0, 1.0], &[1.0, 2.0], &[1.0, 1.0]), 0.25);
        // ties between samples do not count as a gap
        assert_eq!(weighted_ks(&[1.0, 1.0], &[1.0, 1.0], &[1.0], &[1.0]), 0.0);
    }

    #[test]
    fn ks_null_quantile_scales_like_root_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let q = weighted_ks_null_quantile(&x, &[1.0; 2000], 400, 0.99, &mut rng).unwrap();
        // two-sample KS 1% critical value ≈ 1.63 √(2/n)
        let asymptotic = 1.63 * (2.0f64 / 2000.0).sqrt();
        assert!((q / asymptotic - 1.0).abs() < 0.2, "{q} vs {asymptotic}");
    }

    #[test]
    fn quantiles_and_errors() {
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_relative_eq!(rmse(&[1.0, 3.0], 2.0), 1.0);
        assert_relative_eq!(mean_abs_error(&[1.0, 4.0], 2.0), 1.5);
        let a = Estimate { value: 1.0, se: 3.0 };
        let b = Estimate { value: 6.0, se: 4.0 };
        assert_relative_eq!(a.z_distance(&b), 1.0);
    }
}
