use rand::Rng;

use super::evaluate::{evaluate_candidates, CountingModel, TrajectoryModel};
use super::gmm::{sample_candidates, GmmParams};
use super::update::paets_update;
use super::weights::optimality_weights;
use super::PlanConfig;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Diagnostics of one planning iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub best_return: f64,
    pub mean_return: f64,
    /// `1 / sum_k w_k^2`.
    pub effective_sample_size: f64,
    /// `N_m` for each component.
    pub occupancies: Vec<f64>,
    /// Latent rollouts performed (candidates times members).
    pub rollouts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// The mixture after the last iteration.
    pub phi: GmmParams,
    pub iterations: Vec<IterationStats>,
    /// Mixture after each iteration, `trace[j]` being `phi^(j+1)`.
    pub trace: Vec<GmmParams>,
}

impl PlanResult {
    pub fn last(&self) -> Option<&IterationStats> {
        self.iterations.last()
    }
}

/// Runs `config.iterations` rounds of sample, evaluate, weight, refit
/// starting from `init`.
///
/// Per iteration two `u64`s are drawn from `rng`: the candidate sampling
/// seed, then the rollout seed. On error the iterations completed so far are
/// returned inside [`Error::PlanAborted`].
pub fn plan<M: TrajectoryModel, R: Rng + ?Sized>(
    model: &M,
    init: &GmmParams,
    config: &PlanConfig,
    execution: Execution,
    rng: &mut R,
) -> Result<PlanResult> {
    config.validate_allowing_zero_iterations()?;
    let counter = CountingModel::new(model);
    let mut phi = init.clone();
    let mut iterations = Vec::with_capacity(config.iterations);
    let mut trace = Vec::with_capacity(config.iterations);
    for j in 0..config.iterations {
        let step = (|| -> Result<(GmmParams, IterationStats)> {
            let candidates = sample_candidates(
                &phi,
                config.candidates,
                config.action_low,
                config.action_high,
                rng,
            );
            let eval_seed: u64 = rng.gen();
            let before = counter.count();
            let mut batch = evaluate_candidates(&counter, candidates.actions, eval_seed, execution)?;
            let log_q = (config.kappa > 0.0).then(|| {
                batch
                    .actions
                    .iter()
                    .map(|a| phi.log_density(a))
                    .collect::<Vec<f64>>()
            });
            batch.weights = optimality_weights(
                &batch.returns,
                config.lambda,
                config.kappa,
                config.elite_fraction,
                log_q.as_deref(),
            );
            let refit = paets_update(
                &phi,
                &batch.actions,
                &batch.weights,
                config.sigma_floor,
                config.pi_floor,
            );
            let k = batch.returns.len() as f64;
            let stats = IterationStats {
                iteration: j,
                best_return: batch
                    .returns
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max),
                mean_return: batch.returns.iter().sum::<f64>() / k,
                effective_sample_size: 1.0 / batch.weights.iter().map(|w| w * w).sum::<f64>(),
                occupancies: refit.occupancies,
                rollouts: counter.count() - before,
            };
            Ok((refit.phi, stats))
        })();
        match step {
            Ok((next, stats)) => {
                phi = next;
                trace.push(phi.clone());
                iterations.push(stats);
            }
            Err(source) => {
                return Err(Error::PlanAborted {
                    iteration: j,
                    source: Box::new(source),
                    partial: iterations,
                })
            }
        }
    }
    Ok(PlanResult {
        phi,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::Component;
    use crate::rng::StreamRng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `R(a) = -|a|^2`.
    struct NegSquaredNorm;

    impl TrajectoryModel for NegSquaredNorm {
        fn members(&self) -> usize {
            1
        }
        fn rollout_return(&self, _: usize, a: &[f64], _: &mut StreamRng) -> Result<f64> {
            Ok(-a.iter().map(|x| x * x).sum::<f64>())
        }
    }

    fn start(cfg: &PlanConfig, mean: f64) -> GmmParams {
        GmmParams {
            horizon: cfg.horizon,
            action_dim: 1,
            components: vec![Component {
                weight: 1.0,
                mean: vec![mean; cfg.horizon],
                std: vec![cfg.init_std; cfg.horizon],
            }],
        }
    }

    #[test]
    fn zero_iterations_return_initial_mixture() {
        let cfg = PlanConfig {
            iterations: 0,
            components: 1,
            horizon: 3,
            ..Default::default()
        };
        let init = start(&cfg, 0.4);
        let out = plan(
            &NegSquaredNorm,
            &init,
            &cfg,
            Execution::Sequential,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(out.phi, init);
        assert!(out.iterations.is_empty());
    }

    #[test]
    fn quadratic_reward_pulls_mean_to_origin() {
        let cfg = PlanConfig {
            components: 1,
            horizon: 4,
            ..Default::default()
        };
        let init = start(&cfg, 0.8);
        let out = plan(
            &NegSquaredNorm,
            &init,
            &cfg,
            Execution::Parallel,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let norm = |g: &GmmParams| g.components[0].mean.iter().map(|x| x * x).sum::<f64>();
        assert!(norm(&out.phi) < norm(&init));
        assert_eq!(out.iterations.len(), 10);
        assert!(out.iterations.iter().all(|s| s.rollouts == 200));
        out.phi.validate(cfg.sigma_floor, cfg.pi_floor).unwrap();
    }

    #[test]
    fn execution_modes_agree() {
        let cfg = PlanConfig {
            horizon: 3,
            ..Default::default()
        };
        let init = GmmParams::initial(&cfg, 1, &mut ChaCha8Rng::seed_from_u64(1));
        let run = |e| {
            plan(&NegSquaredNorm, &init, &cfg, e, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn errors_keep_partial_diagnostics() {
        struct FailsLate(std::sync::atomic::AtomicUsize);
        impl TrajectoryModel for FailsLate {
            fn members(&self) -> usize {
                1
            }
            fn rollout_return(&self, _: usize, _: &[f64], _: &mut StreamRng) -> Result<f64> {
                let n = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Ok(if n >= 50 { f64::NAN } else { 0.0 })
            }
        }
        let cfg = PlanConfig {
            candidates: 20,
            horizon: 2,
            components: 1,
            ..Default::default()
        };
        let init = start(&cfg, 0.0);
        let err = plan(
            &FailsLate(Default::default()),
            &init,
            &cfg,
            Execution::Sequential,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        match err {
            Error::PlanAborted {
                iteration, partial, ..
            } => {
                assert_eq!(iteration, 2);
                assert_eq!(partial.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
