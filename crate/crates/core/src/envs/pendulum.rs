use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, EnvState, Environment, Step};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumParams {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    /// Torque applied for a unit action.
    pub max_torque: f64,
    /// Viscous damping coefficient.
    pub damping: f64,
    pub action_cost: f64,
    /// Integrator substeps per control interval.
    pub substeps: usize,
    /// Half-width of the uniform reset perturbation of angle and velocity.
    pub reset_noise: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            length: 1.0,
            mass: 1.0,
            max_torque: 5.0,
            damping: 0.0,
            action_cost: 0.01,
            substeps: 10,
            reset_noise: 0.1,
        }
    }
}

/// Torque-limited swing-up. Observations are `(cos theta, sin theta)` with
/// `theta` measured from upright, so the angular velocity is hidden.
///
/// The state is `[psi, omega]` with `psi = theta - pi` measured from
/// hanging down. Reward is `(1 + cos theta) / 2 - action_cost * a^2`, in
/// `[-action_cost, 1]` for `a` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    pub params: PendulumParams,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new(PendulumParams::default())
    }
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Self {
        Self {
            spec: EnvSpec {
                name: "pendulum_po",
                obs_dim: 2,
                action_dim: 1,
                action_low: -1.0,
                action_high: 1.0,
                horizon: 100,
                dt: 0.05,
            },
            params,
        }
    }

    /// Kinetic plus potential energy, zero at rest hanging down.
    pub fn energy(&self, state: &EnvState) -> f64 {
        let p = &self.params;
        let (psi, omega) = (state.0[0], state.0[1]);
        0.5 * p.mass * p.length * p.length * omega * omega
            + p.mass * p.gravity * p.length * (1.0 - psi.cos())
    }

    fn acceleration(&self, psi: f64, omega: f64, torque: f64) -> f64 {
        let p = &self.params;
        let inertia = p.mass * p.length * p.length;
        -(p.gravity / p.length) * psi.sin() + (torque - p.damping * omega) / inertia
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> (EnvState, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.params.reset_noise;
        let (psi, omega) = if w > 0.0 {
            (rng.gen_range(-w..w), rng.gen_range(-w..w))
        } else {
            (0.0, 0.0)
        };
        let state = EnvState(vec![psi, omega]);
        let obs = self.observe(&state);
        (state, obs)
    }

    /// Velocity Verlet with `substeps` substeps; damping enters through the
    /// start-of-substep velocity.
    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        let a = clip_action(&self.spec, action)?[0];
        let torque = a * self.params.max_torque;
        let h = self.spec.dt / self.params.substeps as f64;
        let (mut psi, mut omega) = (state.0[0], state.0[1]);
        for _ in 0..self.params.substeps {
            let acc = self.acceleration(psi, omega, torque);
            psi += h * omega + 0.5 * h * h * acc;
            let acc_next = self.acceleration(psi, omega, torque);
            omega += 0.5 * h * (acc + acc_next);
        }
        let next = EnvState(vec![psi, omega]);
        let observation = self.observe(&next);
        let cos_theta = observation[0];
        let reward = 0.5 * (1.0 + cos_theta) - self.params.action_cost * a * a;
        Ok(Step {
            state: next,
            observation,
            reward,
        })
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        let theta = state.0[0] + PI;
        vec![theta.cos(), theta.sin()]
    }
}
