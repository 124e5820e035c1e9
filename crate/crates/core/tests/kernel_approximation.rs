use rand::Rng;
use simpost_core::feature_maps::{build_rff, KernelConfig, KernelFamily};
use simpost_core::rng::rng_from_seed;

fn exact_kernel(family: KernelFamily, r: f64, sigma: f64) -> f64 {
    match family {
        // ω ~ N(0, 2σ⁻² I)
        KernelFamily::Rbf => (-r * r / (sigma * sigma)).exp(),
        KernelFamily::Matern52 => {
            let a = 5f64.sqrt() * r / sigma;
            (1.0 + a + a * a / 3.0) * (-a).exp()
        }
    }
}

fn mean_abs_error(family: KernelFamily, sigma: f64, features: usize) -> f64 {
    let map = build_rff(&KernelConfig::new(family, sigma, features), 5).unwrap();
    let mut rng = rng_from_seed(2024);
    let mut total = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random()).collect();
        let (fx, fy) = (map.apply(&x).unwrap(), map.apply(&y).unwrap());
        let estimate: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
        let r = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        total += (estimate - exact_kernel(family, r, sigma)).abs();
    }
    total / 100.0
}

#[test]
fn rbf_features_approximate_the_kernel() {
    let coarse = mean_abs_error(KernelFamily::Rbf, 1.0, 250);
    let fine = mean_abs_error(KernelFamily::Rbf, 1.0, 1000);
    assert!(fine <= 0.05, "s = 1000 error {fine}");
    assert!(fine < coarse, "{fine} !< {coarse}");
}

#[test]
fn matern_features_approximate_the_kernel() {
    for sigma in [0.7, 1.0, 2.0] {
        let coarse = mean_abs_error(KernelFamily::Matern52, sigma, 250);
        let fine = mean_abs_error(KernelFamily::Matern52, sigma, 1000);
        assert!(fine <= 0.05, "sigma {sigma}: s = 1000 error {fine}");
        assert!(fine < coarse, "sigma {sigma}: {fine} !< {coarse}");
    }
}

#[test]
fn rbf_error_bound_holds_across_lengthscales() {
    for sigma in [0.5, 2.0] {
        assert!(mean_abs_error(KernelFamily::Rbf, sigma, 1000) <= 0.05);
    }
}

#[test]
fn per_dimension_lengthscales_scale_frequencies() {
    let shared = build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 20), 2).unwrap();
    let mut cfg = KernelConfig::new(KernelFamily::Rbf, 1.0, 20);
    cfg.lengthscale = vec![1.0, 4.0];
    let split = build_rff(&cfg, 2).unwrap();
    for (a, b) in shared.frequencies().iter().zip(split.frequencies()) {
        assert_eq!(a[0], b[0]);
        assert!((a[1] / 4.0 - b[1]).abs() < 1e-15);
    }
}
