//! Partially observed control tasks and analytic reward landscapes.

mod landscape;
mod pendulum;
mod pointmass;

pub use landscape::{grid_maxima, BimodalLandscape, QuadraticLandscape};
pub use pendulum::{Pendulum, PendulumParams};
pub use pointmass::{PointMass, PointMassParams};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: f64,
    pub action_high: f64,
    /// Episode length `H`.
    pub horizon: usize,
    /// Control interval in seconds.
    pub dt: f64,
}

/// Full physical state, hidden from the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub observation: Vec<f64>,
    pub reward: f64,
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Deterministic initial state for `seed` and its observation.
    fn reset(&self, seed: u64) -> (EnvState, Vec<f64>);

    /// Advances one control interval. Actions outside the bounds are clipped.
    fn step(&self, state: &EnvState, action: &[f64]) -> Result<Step>;

    fn observe(&self, state: &EnvState) -> Vec<f64>;
}

pub const ENV_NAMES: [&str; 2] = ["pendulum_po", "pointmass_po"];

/// Looks an environment up by its config name.
pub fn make(name: &str) -> Result<Box<dyn Environment>> {
    match name {
        "pendulum_po" => Ok(Box::new(Pendulum::default())),
        "pointmass_po" => Ok(Box::new(PointMass::default())),
        other => Err(Error::Config(format!(
            "unknown env `{other}`; expected one of {ENV_NAMES:?}"
        ))),
    }
}

pub(crate) fn clip_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::Shape {
            op: "env step",
            lhs: vec![spec.action_dim],
            rhs: vec![action.len()],
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Config(format!("non-finite action {action:?}")));
    }
    let clipped: Vec<f64> = action
        .iter()
        .map(|a| a.clamp(spec.action_low, spec.action_high))
        .collect();
    if clipped != action {
        log::debug!("{}: action {action:?} clipped to {clipped:?}", spec.name);
    }
    Ok(clipped)
}
