use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;

use super::{GenerativeModel, ParamSchema, ParamSpec};
use crate::rng::Rng;

pub const GRAVITY: f64 = 10.0;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub dt: f64,
    pub mass: f64,
    pub length: f64,
}

impl PendulumParams {
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            dt: p[0],
            mass: p[1],
            length: p[2],
        }
    }

    /// `½ I θ̇² + m g (l/2) cos θ` for a uniform rod, `θ = 0` upright.
    pub fn energy(&self, theta: f64, theta_dot: f64) -> f64 {
        let inertia = self.mass * self.length * self.length / 3.0;
        0.5 * inertia * theta_dot * theta_dot + self.mass * GRAVITY * 0.5 * self.length * libm::cos(theta)
    }
}

/// Torque-driven rod pendulum. Internal state `[θ, θ̇]`, observation
/// `[cos θ, sin θ, θ̇]`, explicit Euler with step `dt` and the angular
/// speed clipped to ±8 rad/s.
#[derive(Debug, Clone)]
pub struct Pendulum {
    schema: ParamSchema,
}

impl Pendulum {
    pub fn new() -> Self {
        Self {
            schema: ParamSchema {
                params: vec![
                    ParamSpec::new("dt", "s", 1e-4, 1.0, 0.05),
                    ParamSpec::new("mass", "kg", 0.01, 10.0, 1.0),
                    ParamSpec::new("length", "m", 0.01, 10.0, 1.0),
                ],
            },
        }
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl GenerativeModel for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn schema(&self) -> &ParamSchema {
        &self.schema
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        MAX_TORQUE
    }

    fn initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        let (s, c) = libm::sincos(state[0]);
        vec![c, s, state[1]]
    }

    fn step(&self, state: &[f64], action: &[f64], params: &[f64]) -> Vec<f64> {
        let p = PendulumParams::from_slice(params);
        let (theta, theta_dot) = (state[0], state[1]);
        let u = action[0];
        let acc = 3.0 * GRAVITY / (2.0 * p.length) * libm::sin(theta) + 3.0 / (p.mass * p.length * p.length) * u;
        vec![theta + p.dt * theta_dot, (theta_dot + p.dt * acc).clamp(-MAX_SPEED, MAX_SPEED)]
    }

    fn feedback_action(&self, obs: &[f64], params: &[f64], out: &mut [f64]) {
        // pump energy toward the upright level
        let p = PendulumParams::from_slice(params);
        let theta = libm::atan2(obs[1], obs[0]);
        let gap = p.energy(0.0, 0.0) - p.energy(theta, obs[2]);
        let drive = gap * obs[2];
        out[0] = if drive > 0.0 {
            1.0
        } else if drive < 0.0 {
            -1.0
        } else {
            1.0
        };
    }
}
