//! Summary statistics of state–action trajectories and the standardizer
//! shared by training, inference and ABC.
//!
//! With `τₜ = sₜ − sₜ₋₁` and `aₜ` the action that produced that
//! transition, the statistic vector is
//! `[⟨τᵢ, aⱼ⟩ / T for i, j] ++ mean(τ) ++ var(τ)` (population variance).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::simulators::Trajectory;

pub const STD_FLOOR: f64 = 1e-8;

pub fn stats_len(state_dim: usize, action_dim: usize) -> usize {
    state_dim * action_dim + 2 * state_dim
}

/// Raw (unstandardized) statistics of one trajectory.
pub fn compute_stats(traj: &Trajectory) -> Result<Vec<f64>> {
    let t_len = traj.actions.len();
    if t_len < 2 {
        return Err(Error::TooShortTrajectory { len: t_len });
    }
    check_dim("trajectory states", t_len + 1, traj.states.len())?;
    let ds = traj.states[0].len();
    let da = traj.actions[0].len();
    let t = t_len as f64;
    let mut cross = vec![0.0; ds * da];
    let mut mean = vec![0.0; ds];
    let mut sq = vec![0.0; ds];
    for step in 1..=t_len {
        let (prev, next, action) = (&traj.states[step - 1], &traj.states[step], &traj.actions[step - 1]);
        for i in 0..ds {
            let tau = next[i] - prev[i];
            mean[i] += tau;
            for j in 0..da {
                cross[i * da + j] += tau * action[j];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    for step in 1..=t_len {
        for i in 0..ds {
            let dev = traj.states[step][i] - traj.states[step - 1][i] - mean[i];
            sq[i] += dev * dev;
        }
    }
    let mut out = Vec::with_capacity(stats_len(ds, da));
    out.extend(cross.iter().map(|c| c / t));
    out.extend_from_slice(&mean);
    out.extend(sq.iter().map(|s| s / t));
    Ok(out)
}

/// Per-dimension affine standardization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: rows.len() });
        }
        let d = rows[0].len();
        for r in rows {
            check_dim("standardizer rows", d, r.len())?;
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let var = rows.iter().map(|r| { let c = r[j] - mean[j]; c * c }).sum::<f64>() / n;
                libm::sqrt(var).max(STD_FLOOR)
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("statistics", self.dim(), x.len())?;
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Statistic layout of one benchmark plus its fitted standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSchema {
    pub state_dim: usize,
    pub action_dim: usize,
    pub standardizer: Standardizer,
}

impl StatsSchema {
    pub fn fit(state_dim: usize, action_dim: usize, raw: &[Vec<f64>]) -> Result<Self> {
        let standardizer = Standardizer::fit(raw)?;
        check_dim("statistics length", stats_len(state_dim, action_dim), standardizer.dim())?;
        Ok(Self {
            state_dim,
            action_dim,
            standardizer,
        })
    }

    pub fn len(&self) -> usize {
        stats_len(self.state_dim, self.action_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn standardize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.standardizer.apply(raw)
    }

    /// Mean of the raw statistics over several rollouts, standardized.
    pub fn real_observation(&self, trajectories: &[Trajectory]) -> Result<Vec<f64>> {
        if trajectories.is_empty() {
            return Err(Error::Config("real observation needs at least one trajectory".into()));
        }
        let mut acc = vec![0.0; self.len()];
        for t in trajectories {
            let s = compute_stats(t)?;
            check_dim("trajectory statistics", self.len(), s.len())?;
            acc.iter_mut().zip(&s).for_each(|(a, v)| *a += v);
        }
        let n = trajectories.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        self.standardize(&acc)
    }
}
