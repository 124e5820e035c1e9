//! Conditional mixture density `q(θ | x)`: a linear mixture head on top of
//! a feature map, its maximum-likelihood gradients, an Adam trainer with
//! early stopping, and cross-validated lengthscale selection.
//!
//! The head works on standardized parameters `(θ − shift) / scale`; the
//! affine map back to physical units is part of [`ConditionalDensity`] so
//! every density it reports is in the units of `θ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::feature_maps::{build_rff, FeatureMap, KernelConfig};
use crate::mixture::GaussianMixture;
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::{ln_sqrt_2pi, log_sum_exp};

/// Modified ELU: `slope·(eᶻ − 1) + 1` for `z ≤ 0`, `z + 1` otherwise.
pub fn melu(z: f64, slope: f64) -> f64 {
    if z <= 0.0 {
        slope * libm::expm1(z) + 1.0
    } else {
        z + 1.0
    }
}

pub fn melu_derivative(z: f64, slope: f64) -> f64 {
    if z <= 0.0 {
        slope * libm::exp(z)
    } else {
        1.0
    }
}

/// Weights `φ` of the mixture head, stored flat.
///
/// Layout (row-major, `K` components, `s` features, `d` parameters):
/// `W_α (K×s)`, `b_α (K)`, `W_μ (K·d × s)`, `b_μ (K·d)`, `W_Σ (K·d × s)`,
/// `b_Σ (K·d)`. Rows of `W_μ` and `W_Σ` are grouped by component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureHead {
    components: usize,
    features: usize,
    param_dim: usize,
    elu_slope: f64,
    variance_floor: f64,
    params: Vec<f64>,
}

struct Offsets {
    b_alpha: usize,
    w_mu: usize,
    b_mu: usize,
    w_sigma: usize,
    b_sigma: usize,
    total: usize,
}

impl MixtureHead {
    pub fn param_count(components: usize, features: usize, param_dim: usize) -> usize {
        let kd = components * param_dim;
        components * features + components + 2 * (kd * features + kd)
    }

    pub fn zeros(components: usize, features: usize, param_dim: usize, elu_slope: f64, variance_floor: f64) -> Result<Self> {
        if components == 0 || features == 0 || param_dim == 0 {
            return Err(Error::Config("mixture head dimensions must be positive".into()));
        }
        if !(elu_slope > 0.0 && elu_slope <= 1.0) {
            return Err(Error::Config(format!("elu slope {elu_slope} outside (0, 1]")));
        }
        if !(variance_floor >= 0.0) {
            return Err(Error::Config("variance floor must be non-negative".into()));
        }
        Ok(Self {
            components,
            features,
            param_dim,
            elu_slope,
            variance_floor,
            params: vec![0.0; Self::param_count(components, features, param_dim)],
        })
    }

    pub fn from_params(
        components: usize,
        features: usize,
        param_dim: usize,
        elu_slope: f64,
        variance_floor: f64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut head = Self::zeros(components, features, param_dim, elu_slope, variance_floor)?;
        check_dim("mixture head parameters", head.params.len(), params.len())?;
        head.params = params;
        Ok(head)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn elu_slope(&self) -> f64 {
        self.elu_slope
    }

    pub fn variance_floor(&self) -> f64 {
        self.variance_floor
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> Offsets {
        let (k, s, d) = (self.components, self.features, self.param_dim);
        let b_alpha = k * s;
        let w_mu = b_alpha + k;
        let b_mu = w_mu + k * d * s;
        let w_sigma = b_mu + k * d;
        let b_sigma = w_sigma + k * d * s;
        Offsets {
            b_alpha,
            w_mu,
            b_mu,
            w_sigma,
            b_sigma,
            total: b_sigma + k * d,
        }
    }

    /// Mean bias of component `k`, dimension `j`.
    pub fn mean_bias_mut(&mut self, k: usize, j: usize) -> &mut f64 {
        let o = self.offsets();
        &mut self.params[o.b_mu + k * self.param_dim + j]
    }

    fn activations(&self, phi: &[f64]) -> HeadActivations {
        let (k, s, d) = (self.components, self.features, self.param_dim);
        let o = self.offsets();
        let p = &self.params;
        let row = |start: usize, r: usize| -> f64 { crate::linalg::dot(&p[start + r * s..start + (r + 1) * s], phi) };
        let logits: Vec<f64> = (0..k).map(|c| row(0, c) + p[o.b_alpha + c]).collect();
        let lse = log_sum_exp(&logits);
        let log_alpha = logits.iter().map(|l| l - lse).collect();
        let means = (0..k * d).map(|r| row(o.w_mu, r) + p[o.b_mu + r]).collect();
        let pre_var: Vec<f64> = (0..k * d).map(|r| row(o.w_sigma, r) + p[o.b_sigma + r]).collect();
        let variances = pre_var
            .iter()
            .map(|z| melu(*z, self.elu_slope) + self.variance_floor)
            .collect();
        HeadActivations {
            log_alpha,
            means,
            pre_var,
            variances,
        }
    }

    /// `α = softmax(W_α Φ + b_α)`, `μₖ = W_μₖ Φ + b_μₖ`,
    /// `diag Σₖ = mELU(W_Σₖ Φ + b_Σₖ) + floor`.
    pub fn forward(&self, phi: &[f64]) -> Result<GaussianMixture> {
        check_dim("mixture head features", self.features, phi.len())?;
        let a = self.activations(phi);
        let d = self.param_dim;
        if a.means.iter().chain(&a.variances).chain(&a.log_alpha).any(|v| !v.is_finite()) {
            return Err(Error::TrainingDivergence { epoch: 0, batch: 0 });
        }
        let weights: Vec<f64> = a.log_alpha.iter().map(|l| libm::exp(*l)).collect();
        let means: Vec<Vec<f64>> = a.means.chunks(d).map(|c| c.to_vec()).collect();
        let vars: Vec<Vec<f64>> = a.variances.chunks(d).map(|c| c.to_vec()).collect();
        GaussianMixture::diagonal(&weights, &means, &vars)
    }

    /// Adds `∂(−log q(θ|Φ))/∂φ` to `grad` and, when given, `∂/∂Φ` to
    /// `grad_phi`. Returns `−log q(θ|Φ)`.
    fn accumulate(&self, phi: &[f64], theta: &[f64], grad: &mut [f64], mut grad_phi: Option<&mut [f64]>) -> f64 {
        let (k, s, d) = (self.components, self.features, self.param_dim);
        let o = self.offsets();
        let a = self.activations(phi);
        let log_terms: Vec<f64> = (0..k)
            .map(|c| {
                let mut lg = a.log_alpha[c] - d as f64 * ln_sqrt_2pi();
                for j in 0..d {
                    let v = a.variances[c * d + j];
                    let r = theta[j] - a.means[c * d + j];
                    lg -= 0.5 * (libm::log(v) + r * r / v);
                }
                lg
            })
            .collect();
        let log_q = log_sum_exp(&log_terms);
        let p = &self.params;
        let mut push_row = |start: usize, bias: usize, r: usize, g: f64, grad: &mut [f64]| {
            if g == 0.0 {
                return;
            }
            let w = start + r * s;
            for (gw, f) in grad[w..w + s].iter_mut().zip(phi) {
                *gw += g * f;
            }
            grad[bias + r] += g;
            if let Some(gp) = grad_phi.as_deref_mut() {
                for (gp, wv) in gp.iter_mut().zip(&p[w..w + s]) {
                    *gp += g * wv;
                }
            }
        };
        for c in 0..k {
            let gamma = libm::exp(log_terms[c] - log_q);
            let alpha = libm::exp(a.log_alpha[c]);
            push_row(0, o.b_alpha, c, alpha - gamma, grad);
            for j in 0..d {
                let r = c * d + j;
                let v = a.variances[r];
                let diff = theta[j] - a.means[r];
                push_row(o.w_mu, o.b_mu, r, -gamma * diff / v, grad);
                let dv = -gamma * 0.5 * (diff * diff / (v * v) - 1.0 / v);
                push_row(o.w_sigma, o.b_sigma, r, dv * melu_derivative(a.pre_var[r], self.elu_slope), grad);
            }
        }
        debug_assert_eq!(o.total, self.params.len());
        -log_q
    }
}

struct HeadActivations {
    log_alpha: Vec<f64>,
    means: Vec<f64>,
    pre_var: Vec<f64>,
    variances: Vec<f64>,
}

/// `(θₙ, xₙ)` pairs; `x` are standardized statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub thetas: Vec<Vec<f64>>,
    pub stats: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn new(thetas: Vec<Vec<f64>>, stats: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("training pairs", thetas.len(), stats.len())?;
        if let (Some(t0), Some(x0)) = (thetas.first(), stats.first()) {
            let (dt, dx) = (t0.len(), x0.len());
            for (t, x) in thetas.iter().zip(&stats) {
                check_dim("training theta", dt, t.len())?;
                check_dim("training statistics", dx, x.len())?;
                if t.iter().chain(x).any(|v| !v.is_finite()) {
                    return Err(Error::NumericDomain("training set contains non-finite values".into()));
                }
            }
        }
        Ok(Self { thetas, stats })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn param_dim(&self) -> usize {
        self.thetas.first().map_or(0, Vec::len)
    }

    pub fn stats_dim(&self) -> usize {
        self.stats.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            thetas: indices.iter().map(|&i| self.thetas[i].clone()).collect(),
            stats: indices.iter().map(|&i| self.stats[i].clone()).collect(),
        }
    }

    /// Pairs `θₙ` with `x_{π(n)}` for a seeded permutation `π`.
    pub fn shuffled_pairs(&self, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        Self {
            thetas: self.thetas.clone(),
            stats: idx.iter().map(|&i| self.stats[i].clone()).collect(),
        }
    }
}

/// `q(θ | x)` in physical parameter units.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDensity {
    pub feature_map: FeatureMap,
    pub head: MixtureHead,
    /// Standardization of `θ` seen by the head: `θ = shift + scale ⊙ θ̃`.
    pub theta_shift: Vec<f64>,
    pub theta_scale: Vec<f64>,
}

impl ConditionalDensity {
    pub fn new(feature_map: FeatureMap, head: MixtureHead, theta_shift: Vec<f64>, theta_scale: Vec<f64>) -> Result<Self> {
        check_dim("head features", feature_map.output_dim(), head.features())?;
        check_dim("theta shift", head.param_dim(), theta_shift.len())?;
        check_dim("theta scale", head.param_dim(), theta_scale.len())?;
        if theta_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("theta scale must be positive".into()));
        }
        Ok(Self {
            feature_map,
            head,
            theta_shift,
            theta_scale,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.head.param_dim()
    }

    pub fn stats_dim(&self) -> usize {
        self.feature_map.input_dim()
    }

    /// The mixture over `θ` at statistics `x`.
    pub fn mixture_at(&self, x: &[f64]) -> Result<GaussianMixture> {
        let phi = self.feature_map.apply(x)?;
        self.head.forward(&phi)?.affine(&self.theta_shift, &self.theta_scale)
    }

    pub fn log_density(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.mixture_at(x)?.log_density(theta)
    }

    fn log_scale_sum(&self) -> f64 {
        self.theta_scale.iter().map(|s| libm::log(*s)).sum()
    }

    fn normalize(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.theta_shift)
            .zip(&self.theta_scale)
            .map(|((t, m), s)| (t - m) / s)
            .collect()
    }

    /// Number of trained parameters: the head, plus the network for
    /// neural features. Random Fourier frequencies stay frozen.
    pub fn trainable_len(&self) -> usize {
        self.head.params().len() + self.feature_map.trainable_params()
    }

    pub fn trainable_params(&self) -> Vec<f64> {
        let mut out = self.head.params().to_vec();
        if let FeatureMap::Neural(net) = &self.feature_map {
            out.extend_from_slice(net.params());
        }
        out
    }

    pub fn set_trainable_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim("trainable parameters", self.trainable_len(), params.len())?;
        let h = self.head.params().len();
        self.head.params_mut().copy_from_slice(&params[..h]);
        if let FeatureMap::Neural(net) = &mut self.feature_map {
            net.params_mut().copy_from_slice(&params[h..]);
        }
        Ok(())
    }

    fn example_loss(&self, theta_norm: &[f64], x: &[f64], phi: Option<&[f64]>, grad: &mut [f64]) -> Result<f64> {
        let h = self.head.params().len();
        let (head_grad, feat_grad) = grad.split_at_mut(h);
        match &self.feature_map {
            FeatureMap::Neural(net) => {
                let acts = net.forward(x)?;
                let mut grad_phi = vec![0.0; net.output_dim()];
                let loss = self.head.accumulate(&acts.output, theta_norm, head_grad, Some(&mut grad_phi));
                net.backward_into(x, &acts, &grad_phi, feat_grad);
                Ok(loss)
            }
            FeatureMap::Rff(map) => {
                let owned;
                let phi = match phi {
                    Some(p) => p,
                    None => {
                        owned = map.apply(x)?;
                        &owned
                    }
                };
                Ok(self.head.accumulate(phi, theta_norm, head_grad, None))
            }
        }
    }

    fn example_loss_only(&self, theta_norm: &[f64], x: &[f64], phi: Option<&[f64]>) -> Result<f64> {
        let owned;
        let phi = match (phi, &self.feature_map) {
            (Some(p), FeatureMap::Rff(_)) => p,
            _ => {
                owned = self.feature_map.apply(x)?;
                &owned
            }
        };
        let a = self.head.activations(phi);
        let (k, d) = (self.head.components(), self.head.param_dim());
        let terms: Vec<f64> = (0..k)
            .map(|c| {
                let mut lg = a.log_alpha[c] - d as f64 * ln_sqrt_2pi();
                for j in 0..d {
                    let v = a.variances[c * d + j];
                    let r = theta_norm[j] - a.means[c * d + j];
                    lg -= 0.5 * (libm::log(v) + r * r / v);
                }
                lg
            })
            .collect();
        Ok(-log_sum_exp(&terms))
    }
}

/// Mean negative log-likelihood of `batch` under `model`, in physical
/// units, with its gradient over [`ConditionalDensity::trainable_params`].
pub fn loss_and_gradient(model: &ConditionalDensity, batch: &TrainingSet) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("loss needs a non-empty batch".into()));
    }
    check_dim("batch theta", model.param_dim(), batch.param_dim())?;
    check_dim("batch statistics", model.stats_dim(), batch.stats_dim())?;
    let mut grad = vec![0.0; model.trainable_len()];
    let mut total = 0.0;
    for (theta, x) in batch.thetas.iter().zip(&batch.stats) {
        total += model.example_loss(&model.normalize(theta), x, None, &mut grad)?;
    }
    let n = batch.len() as f64;
    let loss = total / n + model.log_scale_sum();
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence { epoch: 0, batch: 0 });
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss, grad))
}

/// Mean `log q(θₙ | xₙ)` in physical units.
pub fn mean_log_density(model: &ConditionalDensity, data: &TrainingSet) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut total = 0.0;
    for (theta, x) in data.thetas.iter().zip(&data.stats) {
        total -= model.example_loss_only(&model.normalize(theta), x, None)?;
    }
    Ok(total / data.len() as f64 - model.log_scale_sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub components: usize,
    pub variance_floor: f64,
    pub elu_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            components: 5,
            variance_floor: 1e-6,
            elu_slope: 1.0,
            learning_rate: 1e-3,
            batch_size: 100,
            epochs: 500,
            validation_fraction: 0.1,
            patience: 50,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses (mean negative log-likelihood, physical units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub config: TrainerConfig,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..d)
        .map(|j| {
            let var = rows.iter().map(|r| { let c = r[j] - mean[j]; c * c }).sum::<f64>() / n;
            let s = libm::sqrt(var);
            if s > 1e-12 * mean[j].abs().max(1.0) {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Fits `q(θ | x)` by minibatch Adam on the mean negative
/// log-likelihood, keeping the weights with the best validation loss.
pub fn train(config: &TrainerConfig, data: &TrainingSet, feature_map: FeatureMap) -> Result<(ConditionalDensity, TrainingReport)> {
    config.validate()?;
    let needed = 10 * config.components;
    if data.len() < needed {
        return Err(Error::TooFewSamples { needed, got: data.len() });
    }
    check_dim("feature map input", feature_map.input_dim(), data.stats_dim())?;
    let d = data.param_dim();
    let s = feature_map.output_dim();
    let (shift, scale) = column_stats(&data.thetas);

    let mut head = MixtureHead::zeros(config.components, s, d, config.elu_slope, config.variance_floor)?;
    let mut init_rng = rng_from_seed(derive_seed(config.seed, 1));
    let w_scale = 1.0 / libm::sqrt(s as f64);
    let weight_len = {
        let o = head.offsets();
        [(0, o.b_alpha), (o.w_mu, o.b_mu), (o.w_sigma, o.b_sigma)]
    };
    for (start, end) in weight_len {
        for v in &mut head.params_mut()[start..end] {
            let z: f64 = StandardNormal.sample(&mut init_rng);
            *v = w_scale * z;
        }
    }
    // spread component means over the empirical quantiles of θ
    for j in 0..d {
        let mut col: Vec<f64> = data.thetas.iter().map(|t| (t[j] - shift[j]) / scale[j]).collect();
        col.sort_by(f64::total_cmp);
        for k in 0..config.components {
            *head.mean_bias_mut(k, j) = quantile_sorted(&col, (k as f64 + 0.5) / config.components as f64);
        }
    }
    let mut model = ConditionalDensity::new(feature_map, head, shift, scale)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = rng_from_seed(derive_seed(config.seed, 2));
    order.shuffle(&mut rng);
    let n_val = if config.validation_fraction > 0.0 {
        (libm::round(config.validation_fraction * data.len() as f64) as usize).clamp(1, data.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let normalized: Vec<Vec<f64>> = data.thetas.iter().map(|t| model.normalize(t)).collect();
    let cached_phi: Option<Vec<Vec<f64>>> = match &model.feature_map {
        FeatureMap::Rff(map) => Some(data.stats.iter().map(|x| map.apply(x)).collect::<Result<_>>()?),
        FeatureMap::Neural(_) => None,
    };
    let phi_of = |i: usize| cached_phi.as_ref().map(|c| c[i].as_slice());

    let evaluate = |model: &ConditionalDensity, idx: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        for &i in idx {
            total += model.example_loss_only(&normalized[i], &data.stats[i], phi_of(i))?;
        }
        Ok(total / idx.len() as f64 + model.log_scale_sum())
    };

    let mut params = model.trainable_params();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut grad = vec![0.0; params.len()];
    let mut report = TrainingReport {
        config: config.clone(),
        train_loss: Vec::new(),
        validation_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        for (b, batch) in train_idx.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                loss += model.example_loss(&normalized[i], &data.stats[i], phi_of(i), &mut grad)?;
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDivergence { epoch, batch: b });
            }
            let n = batch.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            adam.step(&mut params, &grad);
            model.set_trainable_params(&params)?;
        }
        let train_loss = evaluate(&model, &train_idx)?;
        let val_loss = if n_val > 0 { evaluate(&model, val_idx)? } else { train_loss };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch, batch: 0 });
        }
        report.train_loss.push(train_loss);
        report.validation_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience && n_val > 0 {
                report.stopped_early = true;
                break;
            }
        }
    }
    model.set_trainable_params(&best.1)?;
    Ok((model, report))
}

/// Cross-validation outcome for each candidate lengthscale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleSelection {
    pub best: f64,
    pub candidates: Vec<f64>,
    /// Mean held-out log density per candidate (higher is better).
    pub scores: Vec<f64>,
}

/// Picks the lengthscale with the highest `folds`-fold cross-validated
/// held-out log density; ties go to the larger lengthscale.
pub fn select_lengthscale(
    candidates: &[f64],
    data: &TrainingSet,
    config: &TrainerConfig,
    kernel: &KernelConfig,
    folds: usize,
) -> Result<LengthscaleSelection> {
    if candidates.is_empty() {
        return Err(Error::Config("no lengthscale candidates".into()));
    }
    if candidates.len() == 1 {
        return Ok(LengthscaleSelection {
            best: candidates[0],
            candidates: candidates.to_vec(),
            scores: vec![f64::NAN],
        });
    }
    if folds < 2 || folds > data.len() {
        return Err(Error::Config(format!("cannot run {folds}-fold cross-validation on {} pairs", data.len())));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(config.seed, 3)));
    let fold_of: Vec<Vec<usize>> = (0..folds)
        .map(|f| order.iter().enumerate().filter(|(i, _)| i % folds == f).map(|(_, &v)| v).collect())
        .collect();

    let mut scores = Vec::with_capacity(candidates.len());
    for &sigma in candidates {
        let map = build_rff(&kernel.with_lengthscale(sigma), data.stats_dim())?;
        let mut total = 0.0;
        for f in 0..folds {
            let train_idx: Vec<usize> = (0..folds).filter(|&g| g != f).flat_map(|g| fold_of[g].iter().copied()).collect();
            let (model, _) = train(config, &data.subset(&train_idx), FeatureMap::Rff(map.clone()))?;
            total += mean_log_density(&model, &data.subset(&fold_of[f]))?;
        }
        scores.push(total / folds as f64);
    }
    let best = best_candidate(candidates, &scores);
    Ok(LengthscaleSelection {
        best: candidates[best],
        candidates: candidates.to_vec(),
        scores,
    })
}

/// Index of the highest score, preferring the larger candidate on exact
/// ties. NaN scores never win.
fn best_candidate(candidates: &[f64], scores: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..candidates.len() {
        let better = scores[i] > scores[best] || (scores[i] == scores[best] && candidates[i] > candidates[best]);
        if better || (scores[best].is_nan() && !scores[i].is_nan()) {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_maps::{KernelFamily, NeuralFeatureMap};

    #[test]
    fn ties_go_to_the_larger_lengthscale() {
        assert_eq!(best_candidate(&[0.5, 2.0, 1.0], &[-1.0, -1.0, -1.0]), 1);
        assert_eq!(best_candidate(&[2.0, 0.5], &[-1.0, -1.0]), 0);
        assert_eq!(best_candidate(&[0.5, 2.0], &[-0.5, -1.0]), 0);
        assert_eq!(best_candidate(&[0.5, 2.0, 4.0], &[f64::NAN, -3.0, f64::NAN]), 1);
    }

    #[test]
    fn melu_examples() {
        assert_eq!(melu(0.0, 1.0), 1.0);
        assert_eq!(melu(2.0, 1.0), 3.0);
        assert!((melu(-20.0, 0.5) - 0.5).abs() < 1e-8);
        assert!((melu(-20.0, 0.5) - (0.5 + 0.5 * libm::exp(-20.0))).abs() < 1e-15);
        // continuity at zero
        for slope in [0.1, 0.5, 1.0] {
            assert!((melu(-1e-12, slope) - melu(1e-12, slope)).abs() < 1e-11);
        }
    }

    #[test]
    fn zero_head_gives_uniform_unit_mixture() {
        let head = MixtureHead::zeros(3, 4, 2, 1.0, 1e-6).unwrap();
        let m = head.forward(&[0.3, -0.2, 0.9, 0.1]).unwrap();
        for c in m.components() {
            assert!((c.weight() - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(c.mean(), &[0.0, 0.0]);
            assert_eq!(c.covariance_diagonal(), vec![1.0 + 1e-6; 2]);
        }
    }

    #[test]
    fn single_component_weight_is_one() {
        let mut head = MixtureHead::zeros(1, 3, 1, 1.0, 1e-6).unwrap();
        head.params_mut().iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.37 - 1.0);
        let m = head.forward(&[0.5, 0.1, -0.4]).unwrap();
        assert_eq!(m.weights(), vec![1.0]);
    }

    #[test]
    fn forward_rejects_wrong_feature_length() {
        let head = MixtureHead::zeros(2, 4, 1, 1.0, 1e-6).unwrap();
        assert!(matches!(head.forward(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
        assert!(MixtureHead::zeros(2, 4, 1, 0.0, 1e-6).is_err());
    }

    fn toy_model(neural: bool) -> ConditionalDensity {
        let fmap = if neural {
            FeatureMap::Neural(NeuralFeatureMap::random(2, 5, 6, 4))
        } else {
            FeatureMap::Rff(build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 6), 2).unwrap())
        };
        let head = MixtureHead::zeros(2, 6, 1, 1.0, 1e-6).unwrap();
        ConditionalDensity::new(fmap, head, vec![0.0], vec![1.0]).unwrap()
    }

    #[test]
    fn stationary_point_of_single_pair() {
        let mut model = toy_model(false);
        let mut single = MixtureHead::zeros(1, 6, 1, 1.0, 1e-6).unwrap();
        *single.mean_bias_mut(0, 0) = 0.8;
        model.head = single;
        let batch = TrainingSet::new(vec![vec![0.8]], vec![vec![0.1, 0.2]]).unwrap();
        let (_, grad) = loss_and_gradient(&model, &batch).unwrap();
        let o = model.head.offsets();
        assert!(grad[o.w_mu..o.w_sigma].iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn duplicated_batch_leaves_loss_unchanged() {
        for neural in [false, true] {
            let model = toy_model(neural);
            let batch = TrainingSet::new(
                vec![vec![0.2], vec![-1.0], vec![0.5]],
                vec![vec![0.1, 0.2], vec![1.0, -0.3], vec![0.0, 0.7]],
            )
            .unwrap();
            let doubled = TrainingSet::new(
                batch.thetas.iter().chain(&batch.thetas).cloned().collect(),
                batch.stats.iter().chain(&batch.stats).cloned().collect(),
            )
            .unwrap();
            let (l1, g1) = loss_and_gradient(&model, &batch).unwrap();
            let (l2, g2) = loss_and_gradient(&model, &doubled).unwrap();
            assert!((l1 - l2).abs() < 1e-12);
            for (a, b) in g1.iter().zip(&g2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = toy_model(false);
        assert!(loss_and_gradient(&model, &TrainingSet::default()).is_err());
    }

    #[test]
    fn too_few_samples() {
        let data = TrainingSet::new(vec![vec![0.0]; 9], vec![vec![0.0, 0.0]; 9]).unwrap();
        let fmap = FeatureMap::Rff(build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 4), 2).unwrap());
        let cfg = TrainerConfig {
            components: 1,
            ..TrainerConfig::default()
        };
        assert!(matches!(train(&cfg, &data, fmap), Err(Error::TooFewSamples { needed: 10, got: 9 })));
    }

    #[test]
    fn singleton_candidate_is_returned() {
        let data = TrainingSet::new(vec![vec![0.0]; 3], vec![vec![0.0]; 3]).unwrap();
        let sel = select_lengthscale(
            &[0.7],
            &data,
            &TrainerConfig::default(),
            &KernelConfig::new(KernelFamily::Rbf, 1.0, 4),
            3,
        )
        .unwrap();
        assert_eq!(sel.best, 0.7);
    }
}
