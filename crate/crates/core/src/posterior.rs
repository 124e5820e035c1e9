//! Posterior recovery from a trained conditional density: proposal-prior
//! correction, box truncation, density queries and sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::mixture::GaussianMixture;
use crate::mixture_density::ConditionalDensity;
use crate::rng::rng_from_seed;

/// Consecutive rejections after which sampling gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

/// Support mass below which a truncated posterior is flagged degenerate.
pub const DEGENERATE_MASS: f64 = 1e-6;

const MASS_ESTIMATE_DRAWS: usize = 1 << 17;
const MASS_ESTIMATE_SEED: u64 = 0x6d61_7373;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl UniformBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let b = Self { low, high };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("box bounds", self.low.len(), self.high.len())?;
        if self.low.is_empty() {
            return Err(Error::Config("box must have at least one dimension".into()));
        }
        for (i, (l, h)) in self.low.iter().zip(&self.high).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(Error::Config(format!("box dimension {i}: need low < high, got [{l}, {h}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(t, (l, h))| *t >= *l && *t <= *h)
    }

    pub fn log_volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| libm::log(h - l)).sum()
    }

    pub fn intersect(&self, other: &UniformBox) -> Result<UniformBox> {
        check_dim("box intersection", self.dim(), other.dim())?;
        let low = self.low.iter().zip(&other.low).map(|(a, b)| a.max(*b)).collect();
        let high = self.high.iter().zip(&other.high).map(|(a, b)| a.min(*b)).collect();
        UniformBox::new(low, high).map_err(|_| Error::Config("prior and proposal boxes do not overlap".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    UniformBox(UniformBox),
    /// Row-major covariance.
    Gaussian { mean: Vec<f64>, covariance: Vec<f64> },
    Improper,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::UniformBox(b) => b.validate(),
            PriorSpec::Gaussian { mean, covariance } => {
                check_dim("gaussian prior covariance", mean.len() * mean.len(), covariance.len())?;
                let n = mean.len();
                for i in 0..n {
                    for j in 0..n {
                        if (covariance[i * n + j] - covariance[j * n + i]).abs() > 1e-12 * covariance[i * n + i].abs().max(1.0) {
                            return Err(Error::Config("gaussian prior covariance is not symmetric".into()));
                        }
                    }
                }
                linalg::cholesky(covariance, n)
                    .map(|_| ())
                    .ok_or_else(|| Error::Config("gaussian prior covariance is not positive definite".into()))
            }
            PriorSpec::Improper => Ok(()),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            PriorSpec::UniformBox(b) => Some(b.dim()),
            PriorSpec::Gaussian { mean, .. } => Some(mean.len()),
            PriorSpec::Improper => None,
        }
    }

    pub fn support(&self) -> Option<&UniformBox> {
        match self {
            PriorSpec::UniformBox(b) => Some(b),
            _ => None,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            PriorSpec::UniformBox(b) => b.contains(theta),
            _ => true,
        }
    }

    /// Log density; the improper prior reports 0.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        match self {
            PriorSpec::UniformBox(b) => Ok(if b.contains(theta) {
                -b.log_volume()
            } else {
                f64::NEG_INFINITY
            }),
            PriorSpec::Gaussian { mean, covariance } => {
                GaussianMixture::new(&[1.0], core::slice::from_ref(mean), core::slice::from_ref(covariance))?.log_density(theta)
            }
            PriorSpec::Improper => Ok(0.0),
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            PriorSpec::UniformBox(b) => Ok(b
                .low
                .iter()
                .zip(&b.high)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect()),
            PriorSpec::Gaussian { mean, covariance } => {
                Ok(GaussianMixture::new(&[1.0], core::slice::from_ref(mean), core::slice::from_ref(covariance))?.sample(rng))
            }
            PriorSpec::Improper => Err(Error::Config("cannot sample from an improper prior".into())),
        }
    }
}

/// Where a posterior came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub observation: Vec<f64>,
}

/// A mixture posterior, optionally truncated to a box. Truncated densities
/// are left unnormalised.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub mixture: GaussianMixture,
    pub support: Option<UniformBox>,
    pub provenance: Provenance,
    /// Monte Carlo estimate of the mixture mass inside `support`.
    pub support_mass: Option<f64>,
}

impl PosteriorEstimate {
    pub fn untruncated(mixture: GaussianMixture) -> Self {
        Self {
            mixture,
            support: None,
            provenance: Provenance::default(),
            support_mass: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn is_degenerate(&self) -> bool {
        self.support_mass.is_some_and(|m| m < DEGENERATE_MASS)
    }

    pub fn in_support(&self, theta: &[f64]) -> bool {
        self.support.as_ref().is_none_or(|b| b.contains(theta))
    }

    /// Mixture log density inside the support, `-∞` outside.
    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        check_dim("posterior argument", self.dim(), theta.len())?;
        if self.in_support(theta) {
            self.mixture.log_density(theta)
        } else {
            Ok(f64::NEG_INFINITY)
        }
    }

    pub fn density(&self, theta: &[f64]) -> Result<f64> {
        Ok(libm::exp(self.log_density(theta)?))
    }

    /// Log probability of a target parameter: `-∞` (with a warning) outside
    /// the support, otherwise the untruncated mixture log density.
    pub fn log_prob_target(&self, theta: &[f64]) -> Result<f64> {
        check_dim("target", self.dim(), theta.len())?;
        if !self.in_support(theta) {
            log::warn!("target {theta:?} lies outside the posterior support");
            return Ok(f64::NEG_INFINITY);
        }
        self.mixture.log_density(theta)
    }

    /// Ancestral sampling with rejection against the support box.
    pub fn sample(&self, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::with_capacity(count);
        let mut rejections = 0;
        while out.len() < count {
            let theta = self.mixture.sample(&mut rng);
            if self.in_support(&theta) {
                out.push(theta);
                rejections = 0;
            } else {
                rejections += 1;
                if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                    return Err(Error::DegeneratePosterior(format!(
                        "{MAX_CONSECUTIVE_REJECTIONS} consecutive draws fell outside the support"
                    )));
                }
            }
        }
        Ok(out)
    }
}

/// Restricts `mixture` to `support`, estimating the retained mass.
pub fn truncate(mixture: GaussianMixture, support: UniformBox) -> Result<PosteriorEstimate> {
    support.validate()?;
    check_dim("truncation box", mixture.dim(), support.dim())?;
    let mut rng = rng_from_seed(MASS_ESTIMATE_SEED);
    let inside = (0..MASS_ESTIMATE_DRAWS)
        .filter(|_| support.contains(&mixture.sample(&mut rng)))
        .count();
    let mass = inside as f64 / MASS_ESTIMATE_DRAWS as f64;
    if mass < DEGENERATE_MASS {
        log::warn!("posterior mass inside the support is about {mass:e}; the posterior is degenerate");
    }
    Ok(PosteriorEstimate {
        mixture,
        support: Some(support),
        provenance: Provenance::default(),
        support_mass: Some(mass),
    })
}

/// Divides a mixture by a Gaussian proposal `N(μ₀, Σ₀)`, returning the
/// normalised mixture proportional to `q(θ) / N(θ | μ₀, Σ₀)`.
///
/// Each component needs `Σₖ⁻¹ − Σ₀⁻¹` positive definite.
pub fn divide_by_gaussian(q: &GaussianMixture, mean0: &[f64], cov0: &[f64]) -> Result<GaussianMixture> {
    let d = q.dim();
    check_dim("proposal mean", d, mean0.len())?;
    check_dim("proposal covariance", d * d, cov0.len())?;
    let l0 = linalg::cholesky(cov0, d).ok_or_else(|| Error::NotPositiveDefinite("proposal covariance".into()))?;
    let prec0 = linalg::cholesky_inverse(&l0, d);
    let log_det0 = linalg::log_det_from_cholesky(&l0, d);
    let prec0_mean0 = linalg::mat_vec(&prec0, d, mean0);
    let quad0 = linalg::dot(mean0, &prec0_mean0);

    let mut log_weights = Vec::with_capacity(q.len());
    let mut means = Vec::with_capacity(q.len());
    let mut covs = Vec::with_capacity(q.len());
    for (k, c) in q.components().iter().enumerate() {
        let prec_k = linalg::cholesky_inverse(c.cholesky(), d);
        let prec_new: Vec<f64> = prec_k.iter().zip(&prec0).map(|(a, b)| a - b).collect();
        let l_prec = linalg::cholesky(&prec_new, d).ok_or(Error::ComponentWiderThanProposal { component: k })?;
        let cov_new = linalg::cholesky_inverse(&l_prec, d);
        let prec_k_mean: Vec<f64> = linalg::mat_vec(&prec_k, d, c.mean());
        let rhs: Vec<f64> = prec_k_mean.iter().zip(&prec0_mean0).map(|(a, b)| a - b).collect();
        let mean_new = linalg::cholesky_solve(&l_prec, d, &rhs);
        // log det Σ' = −log det (Σₖ⁻¹ − Σ₀⁻¹)
        let log_det_new = -linalg::log_det_from_cholesky(&l_prec, d);
        let lambda = c.log_det() - log_det0 - log_det_new + linalg::dot(c.mean(), &prec_k_mean)
            - quad0
            - linalg::dot(&mean_new, &rhs);
        log_weights.push(libm::log(c.weight()) - 0.5 * lambda);
        means.push(mean_new);
        covs.push(cov_new);
    }
    let total = crate::special::log_sum_exp(&log_weights);
    let weights: Vec<f64> = log_weights.iter().map(|w| libm::exp(w - total)).collect();
    GaussianMixture::new(&weights, &means, &covs)
}

/// Turns `q(θ | x_r)` into the posterior estimate for `prior`, correcting
/// for the `proposal` the model was trained under.
///
/// Uniform or improper proposals leave the mixture unchanged; a Gaussian
/// proposal is divided out analytically. The result is truncated to the
/// prior box, intersected with a uniform proposal's box when both exist.
pub fn recover_posterior(
    model: &ConditionalDensity,
    observation: &[f64],
    prior: &PriorSpec,
    proposal: &PriorSpec,
) -> Result<PosteriorEstimate> {
    prior.validate()?;
    proposal.validate()?;
    let q = model.mixture_at(observation)?;
    for spec in [prior, proposal] {
        if let Some(d) = spec.dim() {
            check_dim("prior dimension", q.dim(), d)?;
        }
    }
    let (mixture, support) = match (prior, proposal) {
        (PriorSpec::Gaussian { .. }, _) => {
            return Err(Error::Config(
                "unsupported prior: only uniform-box and improper priors can be recovered".into(),
            ))
        }
        (_, PriorSpec::Gaussian { mean, covariance }) => (divide_by_gaussian(&q, mean, covariance)?, prior.support().cloned()),
        (PriorSpec::UniformBox(p), PriorSpec::UniformBox(r)) => (q, Some(p.intersect(r)?)),
        (PriorSpec::UniformBox(p), PriorSpec::Improper) => (q, Some(p.clone())),
        (PriorSpec::Improper, PriorSpec::UniformBox(r)) => (q, Some(r.clone())),
        (PriorSpec::Improper, PriorSpec::Improper) => (q, None),
    };
    let mut estimate = match support {
        Some(b) => truncate(mixture, b)?,
        None => PosteriorEstimate::untruncated(mixture),
    };
    estimate.provenance.observation = observation.to_vec();
    Ok(estimate)
}
