//! Ensemble of independently trained world models.
//!
//! Each member has its own initialization, optimizer state and minibatch
//! stream, all derived from one master seed. Members share nothing during
//! training, so they are trained in parallel.

use std::io::{Read, Write};

use rand::Rng;

use crate::agent::Dataset;
use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam, AdamState};
use crate::par::Execution;
use crate::planner::TrajectoryModel;
use crate::rng::{stream, StreamRng};
use crate::rssm::checkpoint::{read_checkpoint, write_checkpoint};
use crate::rssm::{
    elbo_with_grad, gru_step, posterior, rollout_return, LatentSampling, LatentState, ModelParams,
    RssmConfig,
};

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Observations per training segment.
    pub seq_len: usize,
    pub grad_clip: f64,
    /// L2 penalty standing in for the parameter prior.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            seq_len: 30,
            grad_clip: 100.0,
            weight_decay: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if self.batch_size == 0 || self.seq_len < 2 {
            return Err(Error::Config(
                "train.batch must be >= 1 and train.seq_len >= 2".into(),
            ));
        }
        if !(self.grad_clip > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "train.grad_clip must be > 0 and train.weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Member {
    pub params: ModelParams,
    pub optimizer: AdamState,
    rng: StreamRng,
}

impl Member {
    fn train(
        &mut self,
        data: &Dataset,
        steps: usize,
        config: &TrainConfig,
        names: &[String],
    ) -> Result<Vec<f64>> {
        let adam = Adam {
            weight_decay: config.weight_decay,
            ..Adam::default()
        };
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let batch = data.sample_batch(config.batch_size, config.seq_len, &mut self.rng)?;
            let (report, mut grads) = elbo_with_grad(&self.params, &batch, &mut self.rng)?;
            clip_global_norm(&mut grads, config.grad_clip);
            adam.step(
                self.params.tensors_mut(),
                names,
                &grads,
                &mut self.optimizer,
                config.learning_rate,
            )?;
            losses.push(report.loss);
        }
        Ok(losses)
    }
}

/// Particle approximation of the model posterior.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Member>,
}

/// Per-member filtered latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBelief {
    pub states: Vec<LatentState>,
    pub last_action: Option<Vec<f64>>,
    /// Observations absorbed so far.
    pub step: usize,
}

impl Ensemble {
    /// `size` members; member `i` is initialized from a stream derived from
    /// `(master_seed, i)`.
    pub fn new(config: &RssmConfig, size: usize, master_seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("ensemble.size must be >= 1".into()));
        }
        let members = (0..size as u64)
            .map(|i| {
                let params = ModelParams::init(config, &mut stream(master_seed, &[i, INIT_STREAM]))?;
                Ok(Member {
                    optimizer: AdamState::new(params.tensors()),
                    params,
                    rng: stream(master_seed, &[i, TRAIN_STREAM]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }

    /// Wraps already-built parameters; optimizer and data streams start
    /// fresh from `master_seed`.
    pub fn from_params(params: Vec<ModelParams>, master_seed: u64) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("ensemble.size must be >= 1".into()));
        }
        let members = params
            .into_iter()
            .enumerate()
            .map(|(i, params)| Member {
                optimizer: AdamState::new(params.tensors()),
                params,
                rng: stream(master_seed, &[i as u64, TRAIN_STREAM]),
            })
            .collect();
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn config(&self) -> &RssmConfig {
        self.members[0].params.config()
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn params(&self, member: usize) -> &ModelParams {
        &self.members[member].params
    }

    /// `steps` optimizer steps for every member. Returns each member's loss
    /// per step. Errors carry the index of the failing member.
    pub fn train(
        &mut self,
        data: &Dataset,
        steps: usize,
        config: &TrainConfig,
        execution: Execution,
    ) -> Result<Vec<Vec<f64>>> {
        config.validate()?;
        if steps == 0 {
            return Ok(vec![Vec::new(); self.len()]);
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let names = ModelParams::names();
        let mut work: Vec<(&mut Member, Option<Result<Vec<f64>>>)> =
            self.members.iter_mut().map(|m| (m, None)).collect();
        execution.for_each_mut(&mut work, |_, (member, out)| {
            *out = Some(member.train(data, steps, config, &names));
        });
        work.into_iter()
            .enumerate()
            .map(|(i, (_, out))| {
                out.expect("every member trained").map_err(|e| Error::Member {
                    member: i,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    pub fn initial_belief(&self) -> EnsembleBelief {
        EnsembleBelief {
            states: self
                .members
                .iter()
                .map(|m| LatentState::zeros(m.params.config()))
                .collect(),
            last_action: None,
            step: 0,
        }
    }

    /// Absorbs `observation` after `action` was executed. The first
    /// observation of an episode skips the recurrent step and `action` is
    /// ignored.
    pub fn belief_update<R: Rng + ?Sized>(
        &self,
        belief: &EnsembleBelief,
        action: &[f64],
        observation: &[f64],
        sampling: LatentSampling,
        rng: &mut R,
    ) -> Result<EnsembleBelief> {
        if belief.states.len() != self.len() {
            return Err(Error::Shape {
                op: "belief_update",
                lhs: vec![self.len()],
                rhs: vec![belief.states.len()],
            });
        }
        let mut states = Vec::with_capacity(self.len());
        for (member, prev) in self.members.iter().zip(&belief.states) {
            let h = if belief.step > 0 {
                gru_step(&member.params, prev, action)?
            } else {
                prev.h.clone()
            };
            let s = sampling.draw(&posterior(&member.params, &h, observation)?, rng);
            states.push(LatentState { h, s });
        }
        Ok(EnsembleBelief {
            states,
            last_action: (belief.step > 0).then(|| action.to_vec()),
            step: belief.step + 1,
        })
    }

    /// Population variance across members of the predicted return of
    /// `actions` from `belief`, propagating latent means.
    pub fn disagreement(&self, belief: &EnsembleBelief, actions: &[f64]) -> Result<f64> {
        let model = EnsembleModel {
            ensemble: self,
            belief,
            sampling: LatentSampling::Mean,
        };
        let mut unused = stream(0, &[]);
        let returns = (0..self.len())
            .map(|i| model.rollout_return(i, actions, &mut unused))
            .collect::<Result<Vec<f64>>>()?;
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        Ok(returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n)
    }

    /// Writes all members into one checkpoint, names prefixed `member{i}/`.
    pub fn save(&self, w: &mut impl Write) -> Result<()> {
        let names = ModelParams::names();
        let tensors: Vec<_> = self
            .members
            .iter()
            .enumerate()
            .flat_map(|(i, m)| {
                names
                    .iter()
                    .zip(m.params.tensors())
                    .map(move |(n, t)| (format!("member{i}/{n}"), t))
            })
            .collect();
        write_checkpoint(w, self.config(), tensors.into_iter())
    }

    pub fn load(r: &mut impl Read, master_seed: u64) -> Result<Self> {
        let (config, tensors) = read_checkpoint(r)?;
        let mut groups: Vec<Vec<(String, crate::tensor::Tensor)>> = Vec::new();
        for (name, t) in tensors {
            let (prefix, rest) = name
                .split_once('/')
                .ok_or_else(|| Error::Format(format!("tensor `{name}` lacks a member prefix")))?;
            let i: usize = prefix
                .strip_prefix("member")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad member prefix in `{name}`")))?;
            if i >= groups.len() {
                groups.resize_with(i + 1, Vec::new);
            }
            groups[i].push((rest.to_string(), t));
        }
        let params = groups
            .into_iter()
            .map(|g| ModelParams::from_named(&config, g))
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(params, master_seed)
    }
}

/// Scores action sequences from a belief, one rollout per member.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleModel<'a> {
    pub ensemble: &'a Ensemble,
    pub belief: &'a EnsembleBelief,
    pub sampling: LatentSampling,
}

impl TrajectoryModel for EnsembleModel<'_> {
    fn members(&self) -> usize {
        self.ensemble.len()
    }

    fn rollout_return(&self, member: usize, actions: &[f64], rng: &mut StreamRng) -> Result<f64> {
        rollout_return(
            self.ensemble.params(member),
            &self.belief.states[member],
            actions,
            self.sampling,
            rng,
        )
    }
}
