//! Scripted action sources used to excite the dynamics during data
//! generation. A controller is rebuilt for every rollout from its spec and
//! the rollout seed, so rollouts stay pure functions of their inputs.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::GenerativeModel;
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    RandomUniform,
    BangBangEnergy,
    Sinusoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub seed: u64,
    /// Action magnitude; the model's action bound when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    /// Sinusoid period in steps.
    #[serde(default = "default_period")]
    pub period: f64,
}

fn default_period() -> f64 {
    25.0
}

impl ControllerSpec {
    pub fn new(kind: ControllerKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            amplitude: None,
            period: default_period(),
        }
    }
}

pub trait Controller {
    /// Writes the action for step `t` given the current observation.
    fn act(&mut self, t: usize, obs: &[f64], out: &mut [f64]);
}

struct RandomUniform {
    rng: Rng,
    amplitude: f64,
}

impl Controller for RandomUniform {
    fn act(&mut self, _t: usize, _obs: &[f64], out: &mut [f64]) {
        for a in out.iter_mut() {
            *a = self.amplitude * (2.0 * self.rng.random::<f64>() - 1.0);
        }
    }
}

struct BangBang<'a> {
    model: &'a dyn GenerativeModel,
    params: Vec<f64>,
    amplitude: f64,
}

impl Controller for BangBang<'_> {
    fn act(&mut self, _t: usize, obs: &[f64], out: &mut [f64]) {
        self.model.feedback_action(obs, &self.params, out);
        out.iter_mut().for_each(|a| *a *= self.amplitude);
    }
}

struct Sinusoid {
    amplitude: f64,
    period: f64,
    phases: Vec<f64>,
}

impl Controller for Sinusoid {
    fn act(&mut self, t: usize, _obs: &[f64], out: &mut [f64]) {
        for (a, phase) in out.iter_mut().zip(&self.phases) {
            *a = self.amplitude * libm::sin(2.0 * PI * t as f64 / self.period + phase);
        }
    }
}

/// Instantiates `spec` for one rollout of `model` at `params`.
pub fn builtin_controller<'a>(
    spec: &ControllerSpec,
    model: &'a dyn GenerativeModel,
    params: &[f64],
    rollout_seed: u64,
) -> Box<dyn Controller + 'a> {
    let amplitude = spec.amplitude.unwrap_or_else(|| model.action_bound());
    let mut rng = rng_from_seed(derive_seed(derive_seed(rollout_seed, 1), spec.seed));
    match spec.kind {
        ControllerKind::RandomUniform => Box::new(RandomUniform { rng, amplitude }),
        ControllerKind::BangBangEnergy => Box::new(BangBang {
            model,
            params: params.to_vec(),
            amplitude,
        }),
        ControllerKind::Sinusoid => Box::new(Sinusoid {
            amplitude,
            period: spec.period,
            phases: (0..model.action_dim()).map(|_| rng.random_range(0.0..2.0 * PI)).collect(),
        }),
    }
}
