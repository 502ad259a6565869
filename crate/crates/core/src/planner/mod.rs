//! Latent-space trajectory optimization by variational-inference MPC.
//!
//! Each iteration samples `K` action sequences from a Gaussian-mixture
//! proposal, scores them with a [`TrajectoryModel`] (mean return over
//! ensemble members), turns the scores into optimality weights, and refits
//! the mixture by weighted EM. A single-component mixture with the elite
//! indicator is exactly the cross-entropy method; [`cem`] keeps a standalone
//! version of that for cross-checking.

pub mod cem;
mod evaluate;
mod gmm;
mod plan;
mod update;
mod weights;

pub use evaluate::{evaluate_candidates, CandidateBatch, CountingModel, TrajectoryModel};
pub use gmm::{gmm_density, responsibilities, sample_candidates, Candidates, Component, GmmParams};
pub use plan::{plan, IterationStats, PlanResult};
pub use update::{cem_update, floor_simplex, paets_update, weighted_moments, PaetsStep};
pub use weights::{elite_count, elite_threshold, optimality_weights};

use crate::error::{Error, Result};

/// Which action sequence is executed once planning finishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionSelection {
    /// Draw one sequence from the final mixture.
    #[default]
    Sample,
    /// Mean of the highest-weight component.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    /// Candidates per iteration (`K`).
    pub candidates: usize,
    /// Update iterations (`U`).
    pub iterations: usize,
    /// Planning horizon in steps (`T`).
    pub horizon: usize,
    /// Inverted step size; the optimality likelihood is raised to `1/lambda`.
    pub lambda: f64,
    /// Entropy-regularizer weight on `q(a)^-kappa`.
    pub kappa: f64,
    /// Fraction of candidates passing the optimality threshold.
    pub elite_fraction: f64,
    /// Mixture components (`M`).
    pub components: usize,
    pub action_low: f64,
    pub action_high: f64,
    pub sigma_floor: f64,
    pub pi_floor: f64,
    /// Per-dimension std of a freshly initialized or warm-started mixture.
    pub init_std: f64,
    /// Half-width of the uniform range fresh component means are drawn from
    /// when `components > 1`.
    pub init_mean_spread: f64,
    pub selection: ActionSelection,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            candidates: 200,
            iterations: 10,
            horizon: 12,
            lambda: 1.0,
            kappa: 0.0,
            elite_fraction: 0.1,
            components: 5,
            action_low: -1.0,
            action_high: 1.0,
            sigma_floor: 1e-3,
            pi_floor: 1e-6,
            init_std: 0.5,
            init_mean_spread: 1.0,
            selection: ActionSelection::Sample,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("plan.U must be >= 1".into()));
        }
        self.validate_allowing_zero_iterations()
    }

    /// Everything [`PlanConfig::validate`] checks except `U >= 1`; [`plan`]
    /// accepts `U = 0` and returns the initial mixture.
    pub(crate) fn validate_allowing_zero_iterations(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.candidates < 2 {
            return fail("plan.K must be >= 2");
        }
        if self.horizon < 1 {
            return fail("plan.T must be >= 1");
        }
        if !(self.lambda > 0.0) {
            return fail("plan.lambda must be > 0");
        }
        if !(self.kappa >= 0.0) {
            return fail("plan.kappa must be >= 0");
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return fail("plan.elite_fraction must be in (0, 1]");
        }
        if self.components < 1 {
            return fail("plan.M must be >= 1");
        }
        if !(self.action_low < self.action_high)
            || !self.action_low.is_finite()
            || !self.action_high.is_finite()
        {
            return fail("plan action bounds must be finite with low < high");
        }
        if !(self.sigma_floor > 0.0) || !(self.init_std >= self.sigma_floor) {
            return fail("plan.sigma_floor must be > 0 and <= plan.init_std");
        }
        if !(self.pi_floor >= 0.0) || self.pi_floor * self.components as f64 >= 1.0 {
            return fail("plan.pi_floor must be >= 0 with M * pi_floor < 1");
        }
        if !(self.init_mean_spread >= 0.0) {
            return fail("plan.init_mean_spread must be >= 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PlanConfig::default().validate().unwrap();
    }

    #[test]
    fn invariants_enforced() {
        let bad = [
            PlanConfig {
                candidates: 1,
                ..Default::default()
            },
            PlanConfig {
                iterations: 0,
                ..Default::default()
            },
            PlanConfig {
                horizon: 0,
                ..Default::default()
            },
            PlanConfig {
                lambda: 0.0,
                ..Default::default()
            },
            PlanConfig {
                kappa: -0.1,
                ..Default::default()
            },
            PlanConfig {
                elite_fraction: 0.0,
                ..Default::default()
            },
            PlanConfig {
                elite_fraction: 1.5,
                ..Default::default()
            },
            PlanConfig {
                components: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
