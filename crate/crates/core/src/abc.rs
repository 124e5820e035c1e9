//! Rejection ABC baseline.
//!
//! Parameters are drawn from the proposal, pushed through the simulator
//! and kept when their standardized statistics land within `epsilon` of
//! the observation. The accepted set is summarised by a Gaussian KDE.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::posterior::PriorSpec;
use crate::rng::{derive_seed, rng_from_seed};
use crate::special::{ln_sqrt_2pi, log_sum_exp};

/// Fewest accepted samples a KDE is built from.
pub const MIN_KDE_SAMPLES: usize = 10;
/// Smallest per-dimension KDE bandwidth.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    pub epsilon: f64,
    pub max_simulations: usize,
    /// Per-dimension distance weights; unit weights when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl AbcConfig {
    pub fn new(epsilon: f64, max_simulations: usize) -> Self {
        Self {
            epsilon,
            max_simulations,
            weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // ε = 0 is a legal (empty) sphere
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.max_simulations == 0 {
            return Err(Error::Config("max_simulations must be >= 1".into()));
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::Config("distance weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AbcResult {
    pub accepted: Vec<Vec<f64>>,
    /// Distance of each accepted sample to the observation.
    pub distances: Vec<f64>,
    pub simulations: usize,
}

impl AbcResult {
    pub fn acceptance_rate(&self) -> f64 {
        if self.simulations == 0 {
            0.0
        } else {
            self.accepted.len() as f64 / self.simulations as f64
        }
    }
}

/// Weighted Euclidean distance between standardized statistics.
pub fn distance(x: &[f64], x_r: &[f64], weights: Option<&[f64]>) -> f64 {
    let sum: f64 = match weights {
        Some(w) => x.iter().zip(x_r).zip(w).map(|((a, b), w)| w * (a - b) * (a - b)).sum(),
        None => x.iter().zip(x_r).map(|(a, b)| (a - b) * (a - b)).sum(),
    };
    libm::sqrt(sum)
}

/// Runs `cfg.max_simulations` draws; `simulate(θ, seed)` must return
/// statistics standardized the same way as `x_r`.
pub fn rejection_abc<F>(
    mut simulate: F,
    proposal: &PriorSpec,
    x_r: &[f64],
    cfg: &AbcConfig,
    seed: u64,
) -> Result<AbcResult>
where
    F: FnMut(&[f64], u64) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    proposal.validate()?;
    let mut out = AbcResult::default();
    for i in 0..cfg.max_simulations as u64 {
        let draw_seed = derive_seed(seed, i);
        let mut rng = rng_from_seed(draw_seed);
        let theta = proposal.sample(&mut rng)?;
        let x = simulate(&theta, derive_seed(draw_seed, 1))?;
        out.simulations += 1;
        consider(&mut out, theta, &x, x_r, cfg)?;
    }
    warn_if_empty(&out);
    Ok(out)
}

/// Rejection step over already simulated `(θ, x)` pairs.
pub fn accept_pairs(thetas: &[Vec<f64>], stats: &[Vec<f64>], x_r: &[f64], cfg: &AbcConfig) -> Result<AbcResult> {
    cfg.validate()?;
    check_dim("ABC pairs", thetas.len(), stats.len())?;
    let mut out = AbcResult::default();
    for (theta, x) in thetas.iter().zip(stats).take(cfg.max_simulations) {
        out.simulations += 1;
        consider(&mut out, theta.clone(), x, x_r, cfg)?;
    }
    warn_if_empty(&out);
    Ok(out)
}

fn consider(out: &mut AbcResult, theta: Vec<f64>, x: &[f64], x_r: &[f64], cfg: &AbcConfig) -> Result<()> {
    check_dim("simulated statistics", x_r.len(), x.len())?;
    if let Some(w) = &cfg.weights {
        check_dim("distance weights", x_r.len(), w.len())?;
    }
    let d = distance(x, x_r, cfg.weights.as_deref());
    if d < cfg.epsilon {
        out.accepted.push(theta);
        out.distances.push(d);
    }
    Ok(())
}

fn warn_if_empty(out: &AbcResult) {
    if out.accepted.is_empty() {
        log::warn!("rejection ABC accepted none of {} simulations", out.simulations);
    }
}

/// The `q`-quantile of the distances of `stats` to `x_r`, used to pick
/// `epsilon` for a target acceptance rate.
pub fn epsilon_for_rate(stats: &[Vec<f64>], x_r: &[f64], weights: Option<&[f64]>, q: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
    }
    let mut d: Vec<f64> = stats.iter().map(|x| distance(x, x_r, weights)).collect();
    d.sort_by(f64::total_cmp);
    let k = libm::ceil(q * d.len() as f64) as usize;
    // strict acceptance, so step just past the k-th distance
    let edge = d[k.clamp(1, d.len()) - 1];
    Ok(edge + edge.abs() * 1e-12 + f64::MIN_POSITIVE)
}

/// Per-dimension Silverman bandwidths `(4/(d+2))^(1/(d+4)) n^(-1/(d+4)) σ`.
pub fn silverman_bandwidth(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let d = samples[0].len();
    let factor = libm::pow(4.0 / (d as f64 + 2.0), 1.0 / (d as f64 + 4.0)) * libm::pow(n as f64, -1.0 / (d as f64 + 4.0));
    Ok((0..d)
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n as f64;
            let var = samples.iter().map(|s| (s[j] - mean) * (s[j] - mean)).sum::<f64>() / (n - 1) as f64;
            (factor * libm::sqrt(var)).max(BANDWIDTH_FLOOR)
        })
        .collect())
}

/// Log of the product-Gaussian KDE over `accepted` at `theta`.
pub fn abc_log_prob(accepted: &[Vec<f64>], theta: &[f64]) -> Result<f64> {
    if accepted.len() < MIN_KDE_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_KDE_SAMPLES,
            got: accepted.len(),
        });
    }
    check_dim("ABC query", accepted[0].len(), theta.len())?;
    let h = silverman_bandwidth(accepted)?;
    let norm: f64 = h.iter().map(|b| libm::log(*b) + ln_sqrt_2pi()).sum();
    let terms: Vec<f64> = accepted
        .iter()
        .map(|s| {
            -0.5 * s
                .iter()
                .zip(theta)
                .zip(&h)
                .map(|((a, b), h)| {
                    let z = (a - b) / h;
                    z * z
                })
                .sum::<f64>()
        })
        .collect();
    Ok(log_sum_exp(&terms) - libm::log(accepted.len() as f64) - norm)
}
