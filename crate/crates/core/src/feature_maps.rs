//! Feature maps `Φ(x)` from standardized statistics to the space the
//! mixture head works in.
//!
//! [`RffMap`] is a frozen quasi-Monte-Carlo random Fourier embedding of a
//! shift-invariant kernel; [`NeuralFeatureMap`] is a trainable two-layer
//! tanh network.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::quasi_random::{to_gaussian, to_student_t, HaltonSequence, MAX_DIMENSION};
use crate::rng::rng_from_seed;

/// Student-t degrees of freedom for the Matérn 5/2 spectral law (`dof = 2ν`).
pub const MATERN52_DOF: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `k(Δ) = exp(−Σ Δᵢ² / σᵢ²)`, frequencies `ω ~ N(0, 2σ⁻²)`.
    Rbf,
    /// `k(r) = (1 + √5 r + 5r²/3) exp(−√5 r)` with `r = ‖Δ / σ‖`.
    Matern52,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// One shared lengthscale, or one per input dimension.
    pub lengthscale: Vec<f64>,
    /// Total feature count `s`; half cosines, half sines.
    pub num_features: usize,
}

impl KernelConfig {
    pub fn new(family: KernelFamily, lengthscale: f64, num_features: usize) -> Self {
        Self {
            family,
            lengthscale: vec![lengthscale],
            num_features,
        }
    }

    pub fn validate(&self, input_dim: usize) -> Result<()> {
        if self.num_features == 0 || !self.num_features.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "num_features must be a positive even integer, got {}",
                self.num_features
            )));
        }
        if self.lengthscale.is_empty()
            || (self.lengthscale.len() != 1 && self.lengthscale.len() != input_dim)
        {
            return Err(Error::Config(format!(
                "expected 1 or {input_dim} lengthscales, got {}",
                self.lengthscale.len()
            )));
        }
        if self.lengthscale.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::Config("lengthscales must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn lengthscale_at(&self, dim: usize) -> f64 {
        if self.lengthscale.len() == 1 {
            self.lengthscale[0]
        } else {
            self.lengthscale[dim]
        }
    }

    pub fn with_lengthscale(&self, lengthscale: f64) -> Self {
        Self {
            lengthscale: vec![lengthscale],
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    kernel: KernelConfig,
    /// `s/2` rows of `d` angular frequencies.
    frequencies: Vec<Vec<f64>>,
    biases: Vec<f64>,
    normalizer: f64,
}

/// Builds the QMC random Fourier map for `kernel` on `input_dim` inputs.
///
/// One Halton stream supplies every draw: the first `d` coordinates of
/// point `j` give frequency `j`, the last gives bias `j` mapped to
/// `(−π, π)`, and for Matérn the coordinate before it drives the
/// chi-square mixing variable.
pub fn build_rff(kernel: &KernelConfig, input_dim: usize) -> Result<RffMap> {
    if input_dim == 0 {
        return Err(Error::Config("input_dim must be at least 1".into()));
    }
    kernel.validate(input_dim)?;
    let pairs = kernel.num_features / 2;
    let qmc_dim = match kernel.family {
        KernelFamily::Rbf => input_dim + 1,
        KernelFamily::Matern52 => input_dim + 2,
    };
    if qmc_dim > MAX_DIMENSION {
        return Err(Error::Config(format!(
            "input dimension {input_dim} needs {qmc_dim} Halton bases, at most {MAX_DIMENSION} available"
        )));
    }
    let points = HaltonSequence::new(qmc_dim)?.take_points(pairs);
    let (freq_coords, bias_coords): (Vec<Vec<f64>>, Vec<f64>) = points
        .into_iter()
        .map(|mut p| {
            let b = p.pop().expect("qmc_dim >= 2");
            (p, b)
        })
        .unzip();

    let mut frequencies = match kernel.family {
        KernelFamily::Rbf => {
            let zero = vec![0.0; input_dim];
            to_gaussian(&freq_coords, &zero, 1.0)?
        }
        KernelFamily::Matern52 => to_student_t(&freq_coords, MATERN52_DOF, 1.0)?,
    };
    for row in &mut frequencies {
        for (i, w) in row.iter_mut().enumerate() {
            let per_dim = match kernel.family {
                KernelFamily::Rbf => SQRT_2 / kernel.lengthscale_at(i),
                KernelFamily::Matern52 => 1.0 / kernel.lengthscale_at(i),
            };
            *w *= per_dim;
        }
    }
    let biases = bias_coords.iter().map(|u| 2.0 * PI * u - PI).collect();
    Ok(RffMap {
        kernel: kernel.clone(),
        frequencies,
        biases,
        normalizer: 1.0 / libm::sqrt(pairs as f64),
    })
}

impl RffMap {
    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies[0].len()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[Vec<f64>] {
        &self.frequencies
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    /// `norm · [cos(ωⱼ·x + bⱼ)…, sin(ωⱼ·x + bⱼ)…]`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("rff input", self.input_dim(), x.len())?;
        let pairs = self.frequencies.len();
        let mut out = vec![0.0; 2 * pairs];
        for (j, (w, b)) in self.frequencies.iter().zip(&self.biases).enumerate() {
            let phase = crate::linalg::dot(w, x) + b;
            let (s, c) = libm::sincos(phase);
            out[j] = self.normalizer * c;
            out[pairs + j] = self.normalizer * s;
        }
        Ok(out)
    }
}

/// Two fully connected tanh layers: `tanh(W₂ tanh(W₁x + b₁) + b₂)`.
///
/// Parameters are stored flat in the order `W₁ (h×d), b₁, W₂ (s×h), b₂`,
/// row-major, which is also the column order of [`Self::jacobian`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralFeatureMap {
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    params: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NeuralActivations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl NeuralFeatureMap {
    pub fn param_count(input_dim: usize, hidden: usize, output_dim: usize) -> usize {
        hidden * input_dim + hidden + output_dim * hidden + output_dim
    }

    pub fn zeros(input_dim: usize, hidden: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            params: vec![0.0; Self::param_count(input_dim, hidden, output_dim)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(input_dim: usize, hidden: usize, output_dim: usize, seed: u64) -> Self {
        let mut net = Self::zeros(input_dim, hidden, output_dim);
        let mut rng = rng_from_seed(seed);
        let l1 = libm::sqrt(6.0 / (input_dim + hidden) as f64);
        let l2 = libm::sqrt(6.0 / (hidden + output_dim) as f64);
        let (w1, w2) = (net.w1_range(), net.w2_range());
        for v in &mut net.params[w1] {
            *v = rng.random_range(-l1..l1);
        }
        for v in &mut net.params[w2] {
            *v = rng.random_range(-l2..l2);
        }
        net
    }

    pub fn from_params(input_dim: usize, hidden: usize, output_dim: usize, params: Vec<f64>) -> Result<Self> {
        check_dim(
            "neural feature parameters",
            Self::param_count(input_dim, hidden, output_dim),
            params.len(),
        )?;
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn w1_range(&self) -> core::ops::Range<usize> {
        0..self.hidden * self.input_dim
    }

    fn b1_offset(&self) -> usize {
        self.hidden * self.input_dim
    }

    fn w2_range(&self) -> core::ops::Range<usize> {
        let start = self.b1_offset() + self.hidden;
        start..start + self.output_dim * self.hidden
    }

    fn b2_offset(&self) -> usize {
        self.w2_range().end
    }

    pub fn set_layer2_bias(&mut self, bias: &[f64]) {
        let off = self.b2_offset();
        self.params[off..off + self.output_dim].copy_from_slice(bias);
    }

    pub fn zero_layer2_weights(&mut self) {
        let r = self.w2_range();
        self.params[r].iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn forward(&self, x: &[f64]) -> Result<NeuralActivations> {
        check_dim("neural feature input", self.input_dim, x.len())?;
        let (d, h, s) = (self.input_dim, self.hidden, self.output_dim);
        let p = &self.params;
        let b1 = self.b1_offset();
        let hidden: Vec<f64> = (0..h)
            .map(|i| libm::tanh(p[b1 + i] + crate::linalg::dot(&p[i * d..(i + 1) * d], x)))
            .collect();
        let w2 = self.w2_range().start;
        let b2 = self.b2_offset();
        let output = (0..s)
            .map(|o| {
                let row = &p[w2 + o * h..w2 + (o + 1) * h];
                libm::tanh(p[b2 + o] + crate::linalg::dot(row, &hidden))
            })
            .collect();
        Ok(NeuralActivations { hidden, output })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Accumulates `Jᵀ g` into `grad` (length [`Self::param_count`]), where
    /// `g = ∂L/∂Φ(x)` and `J = ∂Φ(x)/∂params`.
    pub fn backward_into(&self, x: &[f64], acts: &NeuralActivations, grad_output: &[f64], grad: &mut [f64]) {
        let (d, h, s) = (self.input_dim, self.hidden, self.output_dim);
        let p = &self.params;
        let w2 = self.w2_range().start;
        let b1 = self.b1_offset();
        let b2 = self.b2_offset();
        let mut g_hidden = vec![0.0; h];
        for o in 0..s {
            let y = acts.output[o];
            let g = grad_output[o] * (1.0 - y * y);
            if g == 0.0 {
                continue;
            }
            grad[b2 + o] += g;
            for i in 0..h {
                grad[w2 + o * h + i] += g * acts.hidden[i];
                g_hidden[i] += g * p[w2 + o * h + i];
            }
        }
        for i in 0..h {
            let a = acts.hidden[i];
            let g = g_hidden[i] * (1.0 - a * a);
            grad[b1 + i] += g;
            for j in 0..d {
                grad[i * d + j] += g * x[j];
            }
        }
    }

    /// Full Jacobian: row `o` holds `∂Φ_o(x)/∂params`.
    pub fn jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let acts = self.forward(x)?;
        let n = self.params.len();
        let mut unit = vec![0.0; self.output_dim];
        Ok((0..self.output_dim)
            .map(|o| {
                unit.iter_mut().for_each(|v| *v = 0.0);
                unit[o] = 1.0;
                let mut row = vec![0.0; n];
                self.backward_into(x, &acts, &unit, &mut row);
                row
            })
            .collect())
    }
}

/// The feature map in front of the mixture head.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Rff(RffMap),
    Neural(NeuralFeatureMap),
}

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Rff(m) => m.input_dim(),
            FeatureMap::Neural(m) => m.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Rff(m) => m.output_dim(),
            FeatureMap::Neural(m) => m.output_dim(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            FeatureMap::Rff(m) => m.apply(x),
            FeatureMap::Neural(m) => m.apply(x),
        }
    }

    /// Number of feature parameters trained jointly with the head.
    pub fn trainable_params(&self) -> usize {
        match self {
            FeatureMap::Rff(_) => 0,
            FeatureMap::Neural(m) => m.params().len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::inverse_normal_cdf;

    #[test]
    fn single_pair_rbf_uses_first_halton_point() {
        let sigma = 0.7;
        let map = build_rff(&KernelConfig::new(KernelFamily::Rbf, sigma, 2), 1).unwrap();
        let expected = inverse_normal_cdf(0.5) * SQRT_2 / sigma;
        assert_eq!(map.frequencies()[0][0], expected);
        assert!((map.biases()[0] - (2.0 * PI / 3.0 - PI)).abs() < 1e-15);
    }

    #[test]
    fn rebuild_is_bit_identical() {
        for family in [KernelFamily::Rbf, KernelFamily::Matern52] {
            let cfg = KernelConfig {
                family,
                lengthscale: vec![0.5, 1.0, 2.0],
                num_features: 64,
            };
            assert_eq!(build_rff(&cfg, 3).unwrap(), build_rff(&cfg, 3).unwrap());
        }
    }

    #[test]
    fn biases_in_range_and_unit_norm() {
        let map = build_rff(&KernelConfig::new(KernelFamily::Matern52, 1.3, 200), 6).unwrap();
        assert!(map.biases().iter().all(|b| (-PI..=PI).contains(b)));
        for k in 0..20 {
            let x: Vec<f64> = (0..6).map(|i| (i * k) as f64 * 0.37 - 3.0).collect();
            let phi = map.apply(&x).unwrap();
            let norm: f64 = phi.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_phase_gives_cosine_block() {
        // the first Halton point maps to ω = 0; pick x so that the bias is the only phase
        let map = build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 2), 1).unwrap();
        let shifted = RffMap {
            biases: vec![0.0],
            ..map
        };
        let phi = shifted.apply(&[0.3]).unwrap();
        assert_eq!(phi, vec![shifted.normalizer(), 0.0]);
    }

    #[test]
    fn config_validation() {
        assert!(build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 3), 2).is_err());
        assert!(build_rff(&KernelConfig::new(KernelFamily::Rbf, 0.0, 4), 2).is_err());
        assert!(build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 4), 0).is_err());
        assert!(build_rff(&KernelConfig::new(KernelFamily::Matern52, 1.0, 4), 49).is_err());
        let cfg = KernelConfig {
            family: KernelFamily::Rbf,
            lengthscale: vec![1.0, 2.0],
            num_features: 4,
        };
        assert!(build_rff(&cfg, 3).is_err());
        let map = build_rff(&KernelConfig::new(KernelFamily::Rbf, 1.0, 4), 2).unwrap();
        assert!(matches!(map.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn neural_constant_layers() {
        let net = NeuralFeatureMap::zeros(3, 4, 5);
        assert_eq!(net.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 5]);
        let mut net = NeuralFeatureMap::random(3, 4, 5, 9);
        net.zero_layer2_weights();
        let c = [0.1, -0.5, 2.0, 0.0, -3.0];
        net.set_layer2_bias(&c);
        let out = net.apply(&[0.3, 0.2, 0.1]).unwrap();
        for (o, ci) in out.iter().zip(&c) {
            assert_eq!(*o, libm::tanh(*ci));
        }
        assert!(matches!(net.apply(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn neural_jacobian_matches_central_differences() {
        let net = NeuralFeatureMap::random(4, 6, 3, 21);
        let x = [0.4, -1.2, 0.7, 2.0];
        let jac = net.jacobian(&x).unwrap();
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for p in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[p] += h;
            let mut minus = net.clone();
            minus.params_mut()[p] -= h;
            let fp = plus.apply(&x).unwrap();
            let fm = minus.apply(&x).unwrap();
            for o in 0..3 {
                let fd = (fp[o] - fm[o]) / (2.0 * h);
                let a = jac[o][p];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }
}
