//! Gaussian mixtures with full covariances: density evaluation, affine
//! maps, marginals and ancestral sampling.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::special::{ln_sqrt_2pi, log_sum_exp};

/// One weighted Gaussian, with its Cholesky factor cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    weight: f64,
    mean: Vec<f64>,
    covariance: Vec<f64>,
    cholesky: Vec<f64>,
    log_det: f64,
}

impl Component {
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d × d`.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn cholesky(&self) -> &[f64] {
        &self.cholesky
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn covariance_diagonal(&self) -> Vec<f64> {
        let d = self.mean.len();
        (0..d).map(|i| self.covariance[i * d + i]).collect()
    }

    /// `log N(θ | μ, Σ)`.
    pub fn log_gaussian(&self, theta: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff: Vec<f64> = theta.iter().zip(&self.mean).map(|(t, m)| t - m).collect();
        let y = linalg::solve_lower(&self.cholesky, d, &diff);
        -0.5 * linalg::dot(&y, &y) - 0.5 * self.log_det - d as f64 * ln_sqrt_2pi()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

const WEIGHT_SUM_TOL: f64 = 1e-9;

impl GaussianMixture {
    /// Validates the simplex and positive-definiteness, then caches the
    /// Cholesky factors. Weights are renormalised to sum to exactly one.
    pub fn new(weights: &[f64], means: &[Vec<f64>], covariances: &[Vec<f64>]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        check_dim("mixture means", weights.len(), means.len())?;
        check_dim("mixture covariances", weights.len(), covariances.len())?;
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::Config("mixture dimension must be at least 1".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || *w > 1.0 + WEIGHT_SUM_TOL) {
            return Err(Error::Config("mixture weights must lie in [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        let components = weights
            .iter()
            .zip(means)
            .zip(covariances)
            .enumerate()
            .map(|(k, ((&w, mean), cov))| {
                check_dim("component mean", dim, mean.len())?;
                check_dim("component covariance", dim * dim, cov.len())?;
                if mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::NumericDomain(format!("component {k} mean is not finite")));
                }
                let mut cov = cov.clone();
                linalg::symmetrize(&mut cov, dim);
                let chol = linalg::cholesky(&cov, dim).ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("covariance of component {k}"))
                })?;
                let log_det = linalg::log_det_from_cholesky(&chol, dim);
                Ok(Component {
                    weight: w / total,
                    mean: mean.clone(),
                    covariance: cov,
                    cholesky: chol,
                    log_det,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, components })
    }

    pub fn diagonal(weights: &[f64], means: &[Vec<f64>], variances: &[Vec<f64>]) -> Result<Self> {
        let covs: Vec<Vec<f64>> = variances.iter().map(|v| linalg::diag(v)).collect();
        Self::new(weights, means, &covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.covariance.clone()).collect()
    }

    /// `log Σₖ αₖ N(θ | μₖ, Σₖ)` via log-sum-exp.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim("mixture argument", self.dim, theta.len())?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| libm::log(c.weight) + c.log_gaussian(theta))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Posterior component probabilities at `θ`.
    pub fn responsibilities(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim("mixture argument", self.dim, theta.len())?;
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| libm::log(c.weight) + c.log_gaussian(theta))
            .collect();
        let total = log_sum_exp(&terms);
        Ok(terms.iter().map(|t| libm::exp(t - total)).collect())
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (acc, v) in m.iter_mut().zip(&c.mean) {
                *acc += c.weight * v;
            }
        }
        m
    }

    /// Per-dimension variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.dim)
            .map(|i| {
                self.components
                    .iter()
                    .map(|c| {
                        let dm = c.mean[i] - mean[i];
                        c.weight * (c.covariance[i * self.dim + i] + dm * dm)
                    })
                    .sum()
            })
            .collect()
    }

    /// Marginal over the listed dimensions, in that order.
    pub fn marginal(&self, dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d >= self.dim) {
            return Err(Error::Config("invalid marginal dimensions".into()));
        }
        let n = dims.len();
        let means: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| dims.iter().map(|&d| c.mean[d]).collect())
            .collect();
        let covs: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| {
                let mut out = vec![0.0; n * n];
                for (a, &i) in dims.iter().enumerate() {
                    for (b, &j) in dims.iter().enumerate() {
                        out[a * n + b] = c.covariance[i * self.dim + j];
                    }
                }
                out
            })
            .collect();
        Self::new(&self.weights(), &means, &covs)
    }

    /// Image under `θ ↦ shift + scale ⊙ θ`.
    pub fn affine(&self, shift: &[f64], scale: &[f64]) -> Result<Self> {
        check_dim("affine shift", self.dim, shift.len())?;
        check_dim("affine scale", self.dim, scale.len())?;
        let d = self.dim;
        let means: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| (0..d).map(|i| shift[i] + scale[i] * c.mean[i]).collect())
            .collect();
        let covs: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|c| {
                let mut out = c.covariance.clone();
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] *= scale[i] * scale[j];
                    }
                }
                out
            })
            .collect();
        Self::new(&self.weights(), &means, &covs)
    }

    /// Picks a component index by its weight.
    pub fn sample_component<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, c) in self.components.iter().enumerate() {
            if c.weight > 0.0 {
                last_positive = k;
                acc += c.weight;
                if u < acc {
                    return k;
                }
            }
        }
        last_positive
    }

    pub fn sample_from_component<R: rand::Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        let c = &self.components[k];
        let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let noise = linalg::lower_mul(&c.cholesky, self.dim, &z);
        c.mean.iter().zip(noise).map(|(m, e)| m + e).collect()
    }

    /// Ancestral draw: component by weight, then its Gaussian.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.sample_component(rng);
        self.sample_from_component(k, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn standard_normal_at_mode() {
        let m = GaussianMixture::diagonal(&[1.0], &[vec![0.0]], &[vec![1.0]]).unwrap();
        assert!((m.log_density(&[0.0]).unwrap() + 0.918_938_533_204_672_7).abs() < 1e-12);
        let twin = GaussianMixture::diagonal(&[0.5, 0.5], &[vec![0.0], vec![0.0]], &[vec![1.0], vec![1.0]])
            .unwrap();
        assert!((twin.log_density(&[0.0]).unwrap() - m.log_density(&[0.0]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn rejects_invalid_mixtures() {
        assert!(GaussianMixture::diagonal(&[0.6, 0.6], &[vec![0.0], vec![0.0]], &[vec![1.0], vec![1.0]])
            .is_err());
        assert!(matches!(
            GaussianMixture::diagonal(&[1.0], &[vec![0.0]], &[vec![0.0]]),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(GaussianMixture::diagonal(&[], &[], &[]).is_err());
        let m = GaussianMixture::diagonal(&[1.0], &[vec![0.0]], &[vec![1.0]]).unwrap();
        assert!(matches!(m.log_density(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn far_tail_does_not_underflow() {
        let m = GaussianMixture::diagonal(&[0.5, 0.5], &[vec![0.0], vec![1.0]], &[vec![1e-6], vec![1e-6]])
            .unwrap();
        let v = m.log_density(&[500.0]).unwrap();
        assert!(v.is_finite() && v < -1e10);
    }

    #[test]
    fn affine_and_marginal() {
        let m = GaussianMixture::new(
            &[0.3, 0.7],
            &[vec![1.0, 2.0], vec![-1.0, 0.5]],
            &[vec![1.0, 0.2, 0.2, 0.5], vec![0.3, 0.0, 0.0, 2.0]],
        )
        .unwrap();
        let a = m.affine(&[1.0, -1.0], &[2.0, 0.5]).unwrap();
        // change of variables: log p_a(y) = log p(x) − Σ log|scale|
        let x = [0.3, 0.9];
        let y = [1.0 + 2.0 * x[0], -1.0 + 0.5 * x[1]];
        let lhs = a.log_density(&y).unwrap();
        let rhs = m.log_density(&x).unwrap() - libm::log(2.0) - libm::log(0.5);
        assert!((lhs - rhs).abs() < 1e-12);
        let marg = m.marginal(&[1]).unwrap();
        assert_eq!(marg.means(), vec![vec![2.0], vec![0.5]]);
        assert_eq!(marg.covariances(), vec![vec![0.5], vec![2.0]]);
    }

    #[test]
    fn degenerate_weights_sample_single_component() {
        let m = GaussianMixture::diagonal(&[1.0, 0.0], &[vec![-5.0], vec![5.0]], &[vec![0.01], vec![0.01]])
            .unwrap();
        let mut rng = rng_from_seed(3);
        for _ in 0..1000 {
            assert_eq!(m.sample_component(&mut rng), 0);
        }
    }
}
