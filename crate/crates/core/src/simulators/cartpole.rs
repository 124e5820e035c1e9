use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{GenerativeModel, ParamSchema, ParamSpec};
use crate::rng::Rng;

pub const GRAVITY: f64 = 9.8;
const THETA_LIMIT: f64 = 12.0 * 2.0 * core::f64::consts::PI / 360.0;
const X_LIMIT: f64 = 2.4;

/// Physical constants of the cart-pole; `length` is the pole half-length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub length: f64,
    pub masspole: f64,
    pub masscart: f64,
    pub force_mag: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            length: 0.5,
            masspole: 0.1,
            masscart: 1.0,
            force_mag: 10.0,
            dt: 0.02,
        }
    }
}

impl CartPoleParams {
    /// From a full vector in schema order.
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            length: p[0],
            masspole: p[1],
            masscart: p[2],
            force_mag: p[3],
            dt: p[4],
        }
    }
}

/// One explicit-Euler step of the classic cart-pole equations.
///
/// State is `[x, ẋ, θ, θ̇]` with `θ = 0` upright; `force` in newtons.
pub fn cartpole_step(state: &[f64; 4], force: f64, p: &CartPoleParams) -> [f64; 4] {
    let [x, x_dot, theta, theta_dot] = *state;
    let total_mass = p.masspole + p.masscart;
    let polemass_length = p.masspole * p.length;
    let (sin, cos) = libm::sincos(theta);
    let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc =
        (GRAVITY * sin - cos * temp) / (p.length * (4.0 / 3.0 - p.masspole * cos * cos / total_mass));
    let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
    [
        x + p.dt * x_dot,
        x_dot + p.dt * x_acc,
        theta + p.dt * theta_dot,
        theta_dot + p.dt * theta_acc,
    ]
}

/// Cart-pole with pushes `action · force_mag`, `action ∈ [-1, 1]`.
/// Episodes end when the pole passes 12° or the cart leaves ±2.4 m.
#[derive(Debug, Clone)]
pub struct CartPole {
    schema: ParamSchema,
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            schema: ParamSchema {
                params: vec![
                    ParamSpec::new("length", "m", 0.01, 10.0, 0.5),
                    ParamSpec::new("masspole", "kg", 0.01, 10.0, 0.1),
                    ParamSpec::new("masscart", "kg", 0.01, 10.0, 1.0),
                    ParamSpec::new("force_mag", "N", 0.1, 100.0, 10.0),
                    ParamSpec::new("dt", "s", 1e-4, 0.1, 0.02),
                ],
            },
        }
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl GenerativeModel for CartPole {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn schema(&self) -> &ParamSchema {
        &self.schema
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        1.0
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        (0..4).map(|_| rng.random_range(-0.05..0.05)).collect()
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn step(&self, state: &[f64], action: &[f64], params: &[f64]) -> Vec<f64> {
        let p = CartPoleParams::from_slice(params);
        let s = [state[0], state[1], state[2], state[3]];
        cartpole_step(&s, action[0] * p.force_mag, &p).to_vec()
    }

    fn terminated(&self, state: &[f64]) -> bool {
        state[0].abs() > X_LIMIT || state[2].abs() > THETA_LIMIT
    }

    fn feedback_action(&self, obs: &[f64], _params: &[f64], out: &mut [f64]) {
        // push toward the side the pole is falling
        let lean = obs[2] + 0.5 * obs[3];
        out[0] = if lean >= 0.0 { 1.0 } else { -1.0 };
    }
}
