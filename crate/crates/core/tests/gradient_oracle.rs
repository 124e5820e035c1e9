use rand::Rng;
use rand_distr::StandardNormal;
use simpost_core::feature_maps::{build_rff, FeatureMap, KernelConfig, KernelFamily, NeuralFeatureMap};
use simpost_core::mixture_density::{loss_and_gradient, ConditionalDensity, MixtureHead, TrainingSet};
use simpost_core::rng::rng_from_seed;

const STEP: f64 = 1e-5;

fn random_model(neural: bool, seed: u64) -> ConditionalDensity {
    let (k, s, d, x_dim) = (3, 8, 2, 3);
    let fmap = if neural {
        FeatureMap::Neural(NeuralFeatureMap::random(x_dim, 6, s, seed))
    } else {
        FeatureMap::Rff(build_rff(&KernelConfig::new(KernelFamily::Matern52, 0.8, s), x_dim).unwrap())
    };
    let mut rng = rng_from_seed(seed);
    let params: Vec<f64> = (0..MixtureHead::param_count(k, s, d))
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let head = MixtureHead::from_params(k, s, d, 0.7, 1e-3, params).unwrap();
    ConditionalDensity::new(fmap, head, vec![0.3, -0.2], vec![1.5, 0.7]).unwrap()
}

fn random_batch(seed: u64) -> TrainingSet {
    let mut rng = rng_from_seed(seed ^ 0xbeef);
    let thetas = (0..16).map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let stats = (0..16).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    TrainingSet::new(thetas, stats).unwrap()
}

fn max_relative_error(neural: bool) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut model = random_model(neural, seed);
        let batch = random_batch(seed);
        let (_, grad) = loss_and_gradient(&model, &batch).unwrap();
        let base = model.trainable_params();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + STEP;
            model.set_trainable_params(&p).unwrap();
            let up = loss_and_gradient(&model, &batch).unwrap().0;
            p[i] = base[i] - STEP;
            model.set_trainable_params(&p).unwrap();
            let down = loss_and_gradient(&model, &batch).unwrap().0;
            model.set_trainable_params(&base).unwrap();
            let numeric = (up - down) / (2.0 * STEP);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn rff_head_gradient_matches_central_differences() {
    let err = max_relative_error(false);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn neural_gradient_matches_central_differences() {
    let err = max_relative_error(true);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn rff_frequencies_are_not_trained() {
    let model = random_model(false, 0);
    assert_eq!(model.trainable_len(), model.head.params().len());
    let net = random_model(true, 0);
    assert_eq!(net.trainable_len(), net.head.params().len() + NeuralFeatureMap::param_count(3, 6, 8));
}
