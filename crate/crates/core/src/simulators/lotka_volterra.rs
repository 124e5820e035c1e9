use alloc::vec;
use alloc::vec::Vec;

use super::{GenerativeModel, ParamSchema, ParamSpec};
use crate::rng::Rng;

/// RK4 step size; each recorded step integrates `SUBSTEPS` of these.
pub const DT: f64 = 0.01;
pub const SUBSTEPS: usize = 10;
pub const INITIAL_PREY: f64 = 1.0;
pub const INITIAL_PREDATORS: f64 = 0.5;

/// `ẋ = a x − b x y`, `ẏ = c x y − d y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterraParams {
    pub prey_birth: f64,
    pub predation: f64,
    pub predator_birth: f64,
    pub predator_death: f64,
}

impl LotkaVolterraParams {
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            prey_birth: p[0],
            predation: p[1],
            predator_birth: p[2],
            predator_death: p[3],
        }
    }

    fn derivative(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.prey_birth * x - self.predation * x * y,
            self.predator_birth * x * y - self.predator_death * y,
        )
    }

    pub fn rk4(&self, x: f64, y: f64, h: f64) -> (f64, f64) {
        let (k1x, k1y) = self.derivative(x, y);
        let (k2x, k2y) = self.derivative(x + 0.5 * h * k1x, y + 0.5 * h * k1y);
        let (k3x, k3y) = self.derivative(x + 0.5 * h * k2x, y + 0.5 * h * k2y);
        let (k4x, k4y) = self.derivative(x + h * k3x, y + h * k3y);
        (
            x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
            y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        )
    }
}

/// Deterministic predator–prey populations with no control input. Rates
/// of zero are allowed and switch the corresponding process off.
#[derive(Debug, Clone)]
pub struct LotkaVolterra {
    schema: ParamSchema,
}

impl LotkaVolterra {
    pub fn new() -> Self {
        Self {
            schema: ParamSchema {
                params: vec![
                    ParamSpec::new("prey_birth", "1/time", 0.0, 10.0, 0.5),
                    ParamSpec::new("predation", "1/(pop·time)", 0.0, 10.0, 0.5),
                    ParamSpec::new("predator_birth", "1/(pop·time)", 0.0, 10.0, 0.5),
                    ParamSpec::new("predator_death", "1/time", 0.0, 10.0, 0.5),
                ],
            },
        }
    }
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        Self::new()
    }
}

impl GenerativeModel for LotkaVolterra {
    fn name(&self) -> &'static str {
        "lotka_volterra"
    }

    fn schema(&self) -> &ParamSchema {
        &self.schema
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        0
    }

    fn action_bound(&self) -> f64 {
        0.0
    }

    fn initial_state(&self, _rng: &mut Rng) -> Vec<f64> {
        vec![INITIAL_PREY, INITIAL_PREDATORS]
    }

    fn observe(&self, state: &[f64]) -> Vec<f64> {
        state.to_vec()
    }

    fn step(&self, state: &[f64], _action: &[f64], params: &[f64]) -> Vec<f64> {
        let p = LotkaVolterraParams::from_slice(params);
        let (mut x, mut y) = (state[0], state[1]);
        for _ in 0..SUBSTEPS {
            (x, y) = p.rk4(x, y, DT);
        }
        vec![x, y]
    }
}
