use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::rng::{stream, StreamRng};

/// Something that can score an action sequence once per posterior sample.
pub trait TrajectoryModel: Sync {
    /// Number of posterior samples (ensemble members).
    fn members(&self) -> usize;

    /// Predicted return of `member` following the flat action sequence
    /// `actions`.
    fn rollout_return(&self, member: usize, actions: &[f64], rng: &mut StreamRng) -> Result<f64>;
}

/// Wraps a model and counts every rollout it performs.
#[derive(Debug)]
pub struct CountingModel<'a, M> {
    inner: &'a M,
    count: AtomicU64,
}

impl<'a, M: TrajectoryModel> CountingModel<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<M: TrajectoryModel> TrajectoryModel for CountingModel<'_, M> {
    fn members(&self) -> usize {
        self.inner.members()
    }

    fn rollout_return(&self, member: usize, actions: &[f64], rng: &mut StreamRng) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.rollout_return(member, actions, rng)
    }
}

/// Scored candidates of one planning iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBatch {
    pub actions: Vec<Vec<f64>>,
    /// `member_returns[k][i]`.
    pub member_returns: Vec<Vec<f64>>,
    /// Mean over members of `member_returns[k]`.
    pub returns: Vec<f64>,
    /// Normalized optimality weights, filled in after scoring.
    pub weights: Vec<f64>,
}

/// Rolls every candidate out under every member.
///
/// Pair `(k, i)` draws from its own stream derived from `seed`, so the result
/// is identical for any thread count or [`Execution`] mode.
pub fn evaluate_candidates<M: TrajectoryModel>(
    model: &M,
    actions: Vec<Vec<f64>>,
    seed: u64,
    execution: Execution,
) -> Result<CandidateBatch> {
    let e = model.members();
    let k = actions.len();
    let flat: Vec<Result<f64>> = execution.map_range(k * e, |idx| {
        let (cand, member) = (idx / e, idx % e);
        let mut rng = stream(seed, &[cand as u64, member as u64]);
        let r = model
            .rollout_return(member, &actions[cand], &mut rng)
            .map_err(|err| match err {
                Error::NonFiniteReward { step, .. } => Error::NonFiniteReward {
                    candidate: cand,
                    member,
                    step,
                },
                other => other,
            })?;
        if r.is_finite() {
            Ok(r)
        } else {
            Err(Error::NonFiniteReward {
                candidate: cand,
                member,
                step: 0,
            })
        }
    });
    let flat = flat.into_iter().collect::<Result<Vec<f64>>>()?;
    let member_returns: Vec<Vec<f64>> = flat.chunks(e.max(1)).map(<[f64]>::to_vec).collect();
    let returns = member_returns
        .iter()
        .map(|row| row.iter().sum::<f64>() / e as f64)
        .collect();
    Ok(CandidateBatch {
        actions,
        member_returns,
        returns,
        weights: Vec::new(),
    })
}
