use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, EnvState, Environment, Step};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassParams {
    pub mass: f64,
    /// Force applied per unit action along each axis.
    pub max_force: f64,
    pub friction: f64,
    /// Half-width of the uniform initial position box.
    pub start_range: f64,
    pub substeps: usize,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            max_force: 1.0,
            friction: 0.0,
            start_range: 1.0,
            substeps: 10,
        }
    }
}

/// Planar point mass that must reach the origin. State is
/// `[x, y, vx, vy]`; only the position is observed. Reward is the negative
/// distance to the origin.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pub params: PointMassParams,
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new(PointMassParams::default())
    }
}

impl PointMass {
    pub fn new(params: PointMassParams) -> Self {
        Self {
            spec: EnvSpec {
                name: "pointmass_po",
                obs_dim: 2,
                action_dim: 2,
                action_low: -1.0,
                action_high: 1.0,
                horizon: 100,
                dt: 0.05,
            },
            params,
        }
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> (EnvState, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.params.start_range;
        let state = EnvState(vec![rng.gen_range(-r..=r), rng.gen_range(-r..=r), 0.0, 0.0]);
        let obs = self.observe(&state);
        (state, obs)
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step> {
        let a = clip_action(&self.spec, action)?;
        let p = &self.params;
        let h = self.spec.dt / p.substeps as f64;
        let mut s = state.0.clone();
        for _ in 0..p.substeps {
            for axis in 0..2 {
                let acc_of = |v: f64| (a[axis] * p.max_force - p.friction * v) / p.mass;
                let acc = acc_of(s[2 + axis]);
                s[axis] += h * s[2 + axis] + 0.5 * h * h * acc;
                s[2 + axis] += h * acc;
            }
        }
        let next = EnvState(s);
        let observation = self.observe(&next);
        let reward = -observation.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(Step {
            state: next,
            observation,
            reward,
        })
    }

    fn observe(&self, state: &EnvState) -> Vec<f64> {
        state.0[..2].to_vec()
    }
}
