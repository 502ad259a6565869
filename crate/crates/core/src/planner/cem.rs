//! Standalone cross-entropy method over a single diagonal Gaussian.
//!
//! Kept separate from the mixture planner so the two can be checked against
//! each other. It consumes `rng` in the same order as [`super::plan`]: per
//! iteration one `u64` for candidate sampling and one for rollouts, and
//! candidate `k` draws its Gaussian noise from the same derived stream.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::evaluate::{evaluate_candidates, TrajectoryModel};
use super::gmm::NOISE_STREAM;
use super::update::cem_update;
use super::weights::elite_count;
use super::PlanConfig;
use crate::error::Result;
use crate::par::Execution;
use crate::rng::stream;

/// `(mean, std)` after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CemTrace {
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
}

/// Uniform weights over the candidates whose return reaches the
/// `elite_count`-th best.
pub fn elite_weights(returns: &[f64], elite_fraction: f64) -> Vec<f64> {
    let mut sorted = returns.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[elite_count(returns.len(), elite_fraction) - 1];
    let n = returns.iter().filter(|&&r| r >= threshold).count() as f64;
    returns
        .iter()
        .map(|&r| if r >= threshold { 1.0 / n } else { 0.0 })
        .collect()
}

/// Runs `config.iterations` CEM iterations from `(mean, std)`. Only
/// `candidates`, `iterations`, `elite_fraction`, the action bounds and
/// `sigma_floor` are read from `config`.
pub fn run<M: TrajectoryModel, R: Rng + ?Sized>(
    model: &M,
    mean: &[f64],
    std: &[f64],
    config: &PlanConfig,
    execution: Execution,
    rng: &mut R,
) -> Result<CemTrace> {
    let mut mean = mean.to_vec();
    let mut std = std.to_vec();
    let mut trace = CemTrace {
        means: Vec::with_capacity(config.iterations),
        stds: Vec::with_capacity(config.iterations),
    };
    for _ in 0..config.iterations {
        let base: u64 = rng.gen();
        let actions: Vec<Vec<f64>> = (0..config.candidates as u64)
            .map(|k| {
                let mut noise = stream(base, &[k, NOISE_STREAM]);
                mean.iter()
                    .zip(&std)
                    .map(|(mu, s)| {
                        let eps: f64 = StandardNormal.sample(&mut noise);
                        (mu + s * eps).clamp(config.action_low, config.action_high)
                    })
                    .collect()
            })
            .collect();
        let eval_seed: u64 = rng.gen();
        let batch = evaluate_candidates(model, actions, eval_seed, execution)?;
        let weights = elite_weights(&batch.returns, config.elite_fraction);
        (mean, std) = cem_update(&mean, &std, &batch.actions, &weights, config.sigma_floor);
        trace.means.push(mean.clone());
        trace.stds.push(std.clone());
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elites_share_weight_uniformly() {
        let w = elite_weights(&[0.3, 0.9, 0.1, 0.9], 0.25);
        assert_eq!(w, vec![0.0, 0.5, 0.0, 0.5]);
        let w = elite_weights(&[1.0, 2.0, 3.0, 4.0], 0.5);
        assert_eq!(w, vec![0.0, 0.0, 0.5, 0.5]);
    }
}
