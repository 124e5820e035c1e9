//! Black-box generative models `g(θ)` producing state–action trajectories.
//!
//! Each model exposes its full parameter schema; experiments infer a
//! named subset and hold the rest at their defaults
//! ([`ParamSchema::complete`]).

mod cartpole;
mod controllers;
mod lotka_volterra;
mod pendulum;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub use cartpole::{cartpole_step, CartPole, CartPoleParams};
pub use controllers::{builtin_controller, Controller, ControllerKind, ControllerSpec};
pub use lotka_volterra::{LotkaVolterra, LotkaVolterraParams};
pub use pendulum::{Pendulum, PendulumParams};

/// Longest rollout any benchmark runs.
pub const MAX_HORIZON: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub unit: String,
    /// Range in which the simulator is valid (not the inference prior).
    pub low: f64,
    pub high: f64,
    pub default: f64,
}

impl ParamSpec {
    fn new(name: &str, unit: &str, low: f64, high: f64, default: f64) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            low,
            high,
            default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchema {
    pub params: Vec<ParamSpec>,
}

impl ParamSchema {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name:?}")))
    }

    pub fn defaults(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.default).collect()
    }

    /// Full parameter vector with `names` set to `values`, the rest at
    /// their defaults.
    pub fn complete(&self, names: &[String], values: &[f64]) -> Result<Vec<f64>> {
        check_dim("inferred parameters", names.len(), values.len())?;
        let mut full = self.defaults();
        for (n, v) in names.iter().zip(values) {
            full[self.index_of(n)?] = *v;
        }
        Ok(full)
    }

    pub fn validate(&self, full: &[f64]) -> Result<()> {
        check_dim("parameter vector", self.len(), full.len())?;
        for (p, &v) in self.params.iter().zip(full) {
            if !(v >= p.low && v <= p.high) {
                return Err(Error::ParameterOutOfBounds {
                    name: p.name.clone(),
                    value: v,
                    low: p.low,
                    high: p.high,
                });
            }
        }
        Ok(())
    }
}

/// `states` has one more row than `actions`: `actions[t]` moves
/// `states[t]` to `states[t + 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub terminated_early: bool,
}

impl Trajectory {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A simulator with a fixed observation and action layout.
///
/// Implementations split the step into an internal state (what is
/// integrated) and an observation (what is recorded), so e.g. the
/// pendulum can record `(cos θ, sin θ, θ̇)`.
pub trait GenerativeModel: Sync {
    fn name(&self) -> &'static str;

    fn schema(&self) -> &ParamSchema;

    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// Largest action magnitude per dimension.
    fn action_bound(&self) -> f64;

    fn max_horizon(&self) -> usize {
        MAX_HORIZON
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64>;

    fn observe(&self, state: &[f64]) -> Vec<f64>;

    fn step(&self, state: &[f64], action: &[f64], params: &[f64]) -> Vec<f64>;

    fn terminated(&self, _state: &[f64]) -> bool {
        false
    }

    /// Scripted feedback in `[-1, 1]` used by the bang-bang controller.
    fn feedback_action(&self, _obs: &[f64], _params: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Runs `model` at full parameter vector `params` for up to `horizon`
/// steps; deterministic in `(params, controller, horizon, seed)`.
pub fn rollout(
    model: &dyn GenerativeModel,
    params: &[f64],
    controller: &ControllerSpec,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let start = model.initial_state(&mut rng);
    rollout_from(model, params, controller, horizon, seed, start)
}

/// As [`rollout`], from an explicit internal start state.
pub fn rollout_from(
    model: &dyn GenerativeModel,
    params: &[f64],
    controller: &ControllerSpec,
    horizon: usize,
    seed: u64,
    start: Vec<f64>,
) -> Result<Trajectory> {
    model.schema().validate(params)?;
    if horizon == 0 || horizon > model.max_horizon() {
        return Err(Error::Config(format!(
            "horizon {horizon} outside 1..={}",
            model.max_horizon()
        )));
    }
    let mut ctrl: Box<dyn Controller> = builtin_controller(controller, model, params, seed);
    let bound = model.action_bound();
    let mut state = start;
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        terminated_early: false,
    };
    traj.states.push(model.observe(&state));
    let mut action = alloc::vec![0.0; model.action_dim()];
    for t in 0..horizon {
        ctrl.act(t, traj.states.last().expect("non-empty"), &mut action);
        action.iter_mut().for_each(|a| *a = a.clamp(-bound, bound));
        state = model.step(&state, &action, params);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedTrajectory { step: t });
        }
        traj.states.push(model.observe(&state));
        traj.actions.push(action.clone());
        if model.terminated(&state) {
            traj.terminated_early = t + 1 < horizon;
            break;
        }
    }
    Ok(traj)
}

/// Benchmark simulators by id.
pub fn model_by_name(name: &str) -> Result<Box<dyn GenerativeModel>> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::new())),
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "lotka_volterra" => Ok(Box::new(LotkaVolterra::new())),
        other => Err(Error::Config(format!("unknown benchmark {other:?}"))),
    }
}
