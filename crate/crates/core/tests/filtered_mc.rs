use fpp_core::filtered::{compensator, eval_compensated, exp_shot_noise_recursion, filtered_on_grid};
use fpp_core::kernels::KernelSpec;
use fpp_core::point_process::{replica_seed, simulate, IntensitySpec, MarkDistributionSpec};
use fpp_core::stats::mean_estimate;

/// `m₂ ∫_0^t K(t, s)² λ ds` for a constant rate.
fn variance_of_compensated(kernel: &KernelSpec, rate: f64, m2: f64, t: f64) -> f64 {
    let k = kernel.prepare().unwrap();
    let alpha = k.origin_exponent();
    m2 * rate * k.weighted_integral(t, |s| k.eval(t, s).unwrap(), alpha).unwrap()
}

#[test]
fn compensated_process_is_centered_with_second_moment_variance() {
    let rate = 1.5;
    let lambda = IntensitySpec::constant(rate).unwrap();
    let marks = MarkDistributionSpec::Exponential { mean: 2.0 };
    let m2 = marks.variance() + marks.mean().powi(2);
    for kernel in [
        KernelSpec::Fractional { hurst: 0.7 },
        KernelSpec::ExpShotNoise { a: 0.5 },
        KernelSpec::Indicator,
    ] {
        let t = 3.0;
        let values: Vec<f64> = (0..20_000)
            .map(|r| {
                let path = simulate(&lambda, &marks, t, replica_seed(21, r)).unwrap();
                eval_compensated(&path, &kernel, &lambda, marks.mean(), t).unwrap()
            })
            .collect();
        let mean = mean_estimate(&values);
        assert!(mean.value.abs() < 4.0 * mean.se, "{kernel:?}: mean {} +- {}", mean.value, mean.se);
        let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
        let second = mean_estimate(&squares);
        let expected = variance_of_compensated(&kernel, rate, m2, t);
        assert!(
            (second.value - expected).abs() < 4.0 * second.se,
            "{kernel:?}: variance {} +- {} vs {expected}",
            second.value,
            second.se
        );
    }
}

#[test]
fn indicator_compensator_is_the_mean_count() {
    let lambda = IntensitySpec::constant(2.5).unwrap();
    let c = compensator(&KernelSpec::Indicator, &lambda, 1.2, 4.0).unwrap();
    assert!((c - 1.2 * 2.5 * 4.0).abs() < 1e-12);
}

#[test]
fn shot_noise_recursion_agrees_with_direct_sum() {
    let lambda = IntensitySpec::constant(3.0).unwrap();
    let marks = MarkDistributionSpec::LogNormal { mu: 0.0, sigma: 0.5 };
    let grid: Vec<f64> = (0..=400).map(|i| 10.0 * i as f64 / 400.0).collect();
    let a = 0.7;
    for r in 0..20 {
        let path = simulate(&lambda, &marks, 10.0, replica_seed(22, r)).unwrap();
        let recursive = exp_shot_noise_recursion(&path, a, &grid).unwrap();
        for (&t, v) in grid.iter().zip(recursive) {
            let direct: f64 = path.jumps_until(t).map(|(tn, z)| z * (-a * (t - tn)).exp()).sum();
            assert!((v - direct).abs() <= 1e-12 * direct.max(1.0), "t = {t}: {v} vs {direct}");
        }
        let on_grid = filtered_on_grid(&path, &KernelSpec::ExpShotNoise { a }, &grid).unwrap();
        assert_eq!(on_grid.values().len(), grid.len());
    }
}
