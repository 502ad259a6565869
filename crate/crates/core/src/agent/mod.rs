//! Data collection, control episodes and the collect / train / act loop.

mod dataset;

pub use dataset::{Dataset, DatasetWriter, EpisodeRecord, Policy, DATASET_MAGIC, DATASET_VERSION};

use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ensemble::{Ensemble, EnsembleModel, TrainConfig};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::planner::{plan, ActionSelection, GmmParams, PlanConfig};
use crate::rng::{derive_seed, stream};
use crate::rssm::{LatentSampling, RssmConfig};

const SEED_DATA: u64 = 0;
const ENSEMBLE_INIT: u64 = 1;
const CONTROL: u64 = 2;
const EVALUATION: u64 = 3;
const PROBE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Random-policy episodes collected before the first training round.
    pub seed_episodes: usize,
    /// Optimizer steps per member per outer iteration.
    pub train_steps: usize,
    pub outer_iterations: usize,
    /// Std of the Gaussian noise added to executed actions while exploring.
    pub exploration_noise: f64,
    /// Run a noise-free evaluation episode every this many outer iterations;
    /// 0 disables evaluation.
    pub eval_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            seed_episodes: 5,
            train_steps: 200,
            outer_iterations: 30,
            exploration_noise: 0.3,
            eval_every: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.exploration_noise >= 0.0) || !self.exploration_noise.is_finite() {
            return Err(Error::Config("agent.noise must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `n` episodes under uniformly random actions. Episode `j` resets from a
/// seed derived from `(seed, j)`.
pub fn collect_seed_episodes(env: &dyn Environment, n: usize, seed: u64) -> Result<Dataset> {
    let spec = env.spec();
    let mut data = Dataset::new(spec.obs_dim, spec.action_dim);
    for j in 0..n as u64 {
        let reset_seed = derive_seed(seed, &[j, 0]);
        let mut rng = stream(seed, &[j, 1]);
        let (mut state, mut obs) = env.reset(reset_seed);
        let mut record = EpisodeRecord::new(reset_seed, Policy::Random);
        for _ in 0..spec.horizon {
            let action: Vec<f64> = (0..spec.action_dim)
                .map(|_| rng.gen_range(spec.action_low..spec.action_high))
                .collect();
            let step = env.step(&state, &action)?;
            record.push(obs, action, step.reward);
            state = step.state;
            obs = step.observation;
        }
        data.push(record)?;
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeMode {
    /// Planner-sampled actions plus exploration noise.
    Explore,
    /// Mean of the dominant component, no noise.
    Evaluate,
}

#[derive(Debug)]
pub struct EpisodeOutcome {
    pub record: EpisodeRecord,
    pub reward: f64,
    /// Best and mean candidate return of the final planner iteration, per
    /// control step.
    pub plan_best: Vec<f64>,
    pub plan_mean: Vec<f64>,
    /// Set when the episode stopped early; `record` then holds the
    /// transitions up to the failure.
    pub error: Option<Error>,
}

impl EpisodeOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// One episode of model-predictive control: at every step filter the
/// observation into each member's latent state, plan from a warm-started
/// mixture, and execute the first action.
pub fn run_control_episode(
    env: &dyn Environment,
    ensemble: &Ensemble,
    plan_config: &PlanConfig,
    exploration_noise: f64,
    mode: EpisodeMode,
    seed: u64,
    execution: Execution,
) -> EpisodeOutcome {
    let spec = env.spec();
    let reset_seed = derive_seed(seed, &[0]);
    let mut rng = stream(seed, &[1]);
    let (policy, selection) = match mode {
        EpisodeMode::Explore => (Policy::Explore, plan_config.selection),
        EpisodeMode::Evaluate => (Policy::Evaluate, ActionSelection::Mean),
    };
    let (mut state, mut obs) = env.reset(reset_seed);
    let mut outcome = EpisodeOutcome {
        record: EpisodeRecord::new(reset_seed, policy),
        reward: 0.0,
        plan_best: Vec::with_capacity(spec.horizon),
        plan_mean: Vec::with_capacity(spec.horizon),
        error: None,
    };
    let mut belief = ensemble.initial_belief();
    let mut phi: Option<GmmParams> = None;
    let mut action = vec![0.0; spec.action_dim];
    for _ in 0..spec.horizon {
        let step = (|| -> Result<_> {
            belief = ensemble.belief_update(&belief, &action, &obs, LatentSampling::Sample, &mut rng)?;
            let init = match &phi {
                Some(prev) => prev.warm_start(plan_config.init_std),
                None => GmmParams::initial(plan_config, spec.action_dim, &mut rng),
            };
            let model = EnsembleModel {
                ensemble,
                belief: &belief,
                sampling: LatentSampling::Sample,
            };
            let result = plan(&model, &init, plan_config, execution, &mut rng)?;
            let sequence = result.phi.select_sequence(
                selection,
                plan_config.action_low,
                plan_config.action_high,
                &mut rng,
            );
            let mut next_action = sequence[..spec.action_dim].to_vec();
            if mode == EpisodeMode::Explore && exploration_noise > 0.0 {
                let noise = Normal::new(0.0, exploration_noise).expect("finite noise std");
                for a in &mut next_action {
                    *a = (*a + noise.sample(&mut rng)).clamp(spec.action_low, spec.action_high);
                }
            }
            let transition = env.step(&state, &next_action)?;
            Ok((result, next_action, transition))
        })();
        match step {
            Ok((result, next_action, transition)) => {
                if let Some(last) = result.last() {
                    outcome.plan_best.push(last.best_return);
                    outcome.plan_mean.push(last.mean_return);
                }
                outcome
                    .record
                    .push(obs, next_action.clone(), transition.reward);
                outcome.reward += transition.reward;
                phi = Some(result.phi);
                action = next_action;
                state = transition.state;
                obs = transition.observation;
            }
            Err(e) => {
                warn!("episode aborted after {} steps: {e}", outcome.record.len());
                outcome.error = Some(e);
                break;
            }
        }
    }
    outcome
}

/// Everything the outer loop needs besides the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub rssm: RssmConfig,
    pub plan: PlanConfig,
    pub train: TrainConfig,
    pub agent: AgentConfig,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.rssm.validate()?;
        self.plan.validate()?;
        self.train.validate()?;
        self.agent.validate()?;
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble.size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Statistics of one outer iteration. Iteration 0 describes the seed data.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub episodes: usize,
    pub transitions: usize,
    /// Mean of each member's last (up to) 50 training losses.
    pub member_train_loss: Vec<f64>,
    pub episode_reward: f64,
    /// Mean over control steps of the final planner iteration's best return.
    pub plan_best_return: f64,
    pub plan_mean_return: f64,
    /// Ensemble disagreement on a fixed probe after training.
    pub disagreement: f64,
    pub wall_seconds: f64,
    /// Reward of the evaluation episode, when one ran this iteration.
    pub eval_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct History {
    pub iterations: Vec<IterationRecord>,
}

impl History {
    /// Episode rewards of the control episodes, in order.
    pub fn episode_rewards(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .filter(|r| r.iteration > 0)
            .map(|r| r.episode_reward)
            .collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Probe used for the per-iteration disagreement diagnostic: the filtered
/// first observation of a fixed reset, followed by zero actions over the
/// planning horizon.
pub fn probe_disagreement(
    env: &dyn Environment,
    ensemble: &Ensemble,
    horizon: usize,
    seed: u64,
) -> Result<f64> {
    let (_, obs) = env.reset(derive_seed(seed, &[PROBE]));
    let ad = env.spec().action_dim;
    let belief = ensemble.belief_update(
        &ensemble.initial_belief(),
        &vec![0.0; ad],
        &obs,
        LatentSampling::Mean,
        &mut stream(seed, &[PROBE]),
    )?;
    ensemble.disagreement(&belief, &vec![0.0; horizon * ad])
}

/// Alternates ensemble training and control episodes, growing the dataset.
///
/// `on_iteration` is called after every recorded iteration, including the
/// seed-data iteration 0, with the current ensemble and dataset.
/// Errors from the callback are passed through unchanged.
pub fn outer_loop<E: From<Error>>(
    env: &dyn Environment,
    config: &LoopConfig,
    execution: Execution,
    mut on_iteration: impl FnMut(&IterationRecord, &Ensemble, &Dataset) -> std::result::Result<(), E>,
) -> std::result::Result<(History, Ensemble, Dataset), E> {
    config.validate()?;
    let start = Instant::now();
    let spec = env.spec();
    if spec.obs_dim != config.rssm.obs_dim || spec.action_dim != config.rssm.action_dim {
        return Err(E::from(Error::Config(format!(
            "model dims ({}, {}) do not match env {} ({}, {})",
            config.rssm.obs_dim, config.rssm.action_dim, spec.name, spec.obs_dim, spec.action_dim
        ))));
    }
    let mut data = collect_seed_episodes(
        env,
        config.agent.seed_episodes,
        derive_seed(config.seed, &[SEED_DATA]),
    )?;
    let mut ensemble = Ensemble::new(
        &config.rssm,
        config.ensemble_size,
        derive_seed(config.seed, &[ENSEMBLE_INIT]),
    )?;
    let seed_rewards: Vec<f64> = data.episodes.iter().map(EpisodeRecord::total_reward).collect();
    let seed_row = IterationRecord {
        iteration: 0,
        episodes: data.episodes.len(),
        transitions: data.transitions(),
        member_train_loss: Vec::new(),
        episode_reward: mean(&seed_rewards),
        plan_best_return: f64::NAN,
        plan_mean_return: f64::NAN,
        disagreement: probe_disagreement(env, &ensemble, config.plan.horizon, config.seed)?,
        wall_seconds: start.elapsed().as_secs_f64(),
        eval_reward: None,
    };
    on_iteration(&seed_row, &ensemble, &data)?;
    let mut history = History {
        iterations: vec![seed_row],
    };
    for it in 1..=config.agent.outer_iterations {
        let losses = ensemble.train(&data, config.agent.train_steps, &config.train, execution)?;
        let outcome = run_control_episode(
            env,
            &ensemble,
            &config.plan,
            config.agent.exploration_noise,
            EpisodeMode::Explore,
            derive_seed(config.seed, &[CONTROL, it as u64]),
            execution,
        );
        if let Some(e) = outcome.error {
            return Err(e.into());
        }
        let eval_reward = if config.agent.eval_every > 0 && it % config.agent.eval_every == 0 {
            let eval = run_control_episode(
                env,
                &ensemble,
                &config.plan,
                0.0,
                EpisodeMode::Evaluate,
                derive_seed(config.seed, &[EVALUATION, it as u64]),
                execution,
            );
            if let Some(e) = eval.error {
                return Err(e.into());
            }
            Some(eval.reward)
        } else {
            None
        };
        data.push(outcome.record)?;
        let row = IterationRecord {
            iteration: it,
            episodes: data.episodes.len(),
            transitions: data.transitions(),
            member_train_loss: losses
                .iter()
                .map(|l| mean(&l[l.len().saturating_sub(50)..]))
                .collect(),
            episode_reward: outcome.reward,
            plan_best_return: mean(&outcome.plan_best),
            plan_mean_return: mean(&outcome.plan_mean),
            disagreement: probe_disagreement(env, &ensemble, config.plan.horizon, config.seed)?,
            wall_seconds: start.elapsed().as_secs_f64(),
            eval_reward,
        };
        info!(
            "iteration {it}: reward {:.3}, transitions {}, disagreement {:.4}",
            row.episode_reward, row.transitions, row.disagreement
        );
        on_iteration(&row, &ensemble, &data)?;
        history.iterations.push(row);
    }
    Ok((history, ensemble, data))
}
