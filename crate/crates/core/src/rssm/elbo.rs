//! Sequential negative ELBO on a tape.
//!
//! For a segment `x_1..x_L`, `a_1..a_{L-1}`, `r_2..r_L` starting from
//! `h_1 = 0`:
//!
//! ```text
//! loss = sum_t [ -log p(x_t | h_t, s_t) - scale * log p(r_t | h_t, s_t) ]
//!      + sum_t max(KL(q(s_t | h_t, x_t) || p(s_t | h_t)), free_nats)
//! ```
//!
//! with `s_t = mean_q + std_q * eps_t` and `h_{t+1} = gru(h_t, s_t, a_t)`.
//! Batches of segments are averaged.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Layer, ModelParams, RssmConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, LossBreakdown, Result};
use crate::tensor::Tensor;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A batch of equal-length training segments, stored time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    /// `len` tensors of shape `[batch, obs_dim]`.
    pub obs: Vec<Tensor>,
    /// `len - 1` tensors of shape `[batch, action_dim]`; `actions[t]` moves
    /// step `t` to `t + 1`.
    pub actions: Vec<Tensor>,
    /// `len - 1` tensors of shape `[batch, 1]`; `rewards[t]` is observed
    /// together with `obs[t + 1]`.
    pub rewards: Vec<Tensor>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.obs.first().map_or(0, |t| t.shape()[0])
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Builds a batch of one from flat per-step slices.
    pub fn single(obs: &[Vec<f64>], actions: &[Vec<f64>], rewards: &[f64]) -> Self {
        Self {
            obs: obs.iter().map(|o| Tensor::row(o)).collect(),
            actions: actions.iter().map(|a| Tensor::row(a)).collect(),
            rewards: rewards.iter().map(|&r| Tensor::row(&[r])).collect(),
        }
    }

    fn validate(&self, c: &RssmConfig) -> Result<()> {
        let l = self.len();
        if l < 2 || self.actions.len() != l - 1 || self.rewards.len() != l - 1 {
            return Err(Error::Shape {
                op: "elbo segment",
                lhs: vec![l, l.saturating_sub(1), l.saturating_sub(1)],
                rhs: vec![l, self.actions.len(), self.rewards.len()],
            });
        }
        let b = self.batch_size();
        let expect = |t: &Tensor, width: usize| -> Result<()> {
            if t.shape() != [b, width] {
                return Err(Error::Shape {
                    op: "elbo segment",
                    lhs: vec![b, width],
                    rhs: t.shape().to_vec(),
                });
            }
            Ok(())
        };
        self.obs.iter().try_for_each(|t| expect(t, c.obs_dim))?;
        self.actions.iter().try_for_each(|t| expect(t, c.action_dim))?;
        self.rewards.iter().try_for_each(|t| expect(t, 1))
    }
}

/// Value of the objective and its parts, each averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboReport {
    /// Negative ELBO as optimized (free-nats floor applied).
    pub loss: f64,
    pub observation_nll: f64,
    pub reward_nll: f64,
    /// Unfloored KL summed over time.
    pub complexity: f64,
}

impl ElboReport {
    pub fn reconstruction(&self) -> f64 {
        self.observation_nll + self.reward_nll
    }
}

struct Graph {
    loss: Var,
    observation_nll: Var,
    reward_nll: Var,
    complexity: Var,
}

fn linear(tape: &mut Tape, vars: &[Var], layer: Layer, x: Var) -> Result<Var> {
    let idx = Layer::ALL.iter().position(|l| *l == layer).unwrap();
    let xw = tape.matmul(x, vars[2 * idx])?;
    tape.add(xw, vars[2 * idx + 1])
}

fn tanh_linear(tape: &mut Tape, vars: &[Var], layer: Layer, x: Var) -> Result<Var> {
    let y = linear(tape, vars, layer, x)?;
    Ok(tape.tanh(y))
}

fn gaussian_head(
    tape: &mut Tape,
    vars: &[Var],
    hidden: Layer,
    out: Layer,
    input: Var,
    c: &RssmConfig,
) -> Result<(Var, Var)> {
    let z = tanh_linear(tape, vars, hidden, input)?;
    let raw = linear(tape, vars, out, z)?;
    let mean = tape.slice(raw, 0, c.s_dim)?;
    let pre_std = tape.slice(raw, c.s_dim, 2 * c.s_dim)?;
    let sp = tape.softplus(pre_std);
    Ok((mean, tape.add_scalar(sp, c.min_std)))
}

fn gru(tape: &mut Tape, vars: &[Var], h: Var, s: Var, a: Var, hd: usize) -> Result<Var> {
    let input = tape.concat(&[s, a])?;
    let gx = linear(tape, vars, Layer::GruInput, input)?;
    let gh = linear(tape, vars, Layer::GruHidden, h)?;
    let gate = |tape: &mut Tape, k: usize| -> Result<(Var, Var)> {
        Ok((
            tape.slice(gx, k * hd, (k + 1) * hd)?,
            tape.slice(gh, k * hd, (k + 1) * hd)?,
        ))
    };
    let (rx, rh) = gate(tape, 0)?;
    let pre = tape.add(rx, rh)?;
    let reset = tape.sigmoid(pre);
    let (ux, uh) = gate(tape, 1)?;
    let pre = tape.add(ux, uh)?;
    let update = tape.sigmoid(pre);
    let (nx, nh) = gate(tape, 2)?;
    let gated = tape.mul(reset, nh)?;
    let pre = tape.add(nx, gated)?;
    let candidate = tape.tanh(pre);
    // (1 - z) * n + z * h
    let neg_update = tape.scale(update, -1.0);
    let keep = tape.add_scalar(neg_update, 1.0);
    let a = tape.mul(keep, candidate)?;
    let b = tape.mul(update, h)?;
    tape.add(a, b)
}

/// `sum_d [0.5 ((x - mu) / std)^2 + ln std] + 0.5 * D * ln(2 pi)` per row,
/// for a fixed `std`.
fn gaussian_nll(tape: &mut Tape, target: Var, mean: Var, dim: usize, std: f64) -> Result<Var> {
    let diff = tape.sub(target, mean)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum_last(sq);
    let half = tape.scale(s, 0.5 / (std * std));
    Ok(tape.add_scalar(half, dim as f64 * (HALF_LN_2PI + std.ln())))
}

/// Closed-form diagonal KL per row.
fn kl_rows(tape: &mut Tape, mq: Var, sq: Var, mp: Var, sp: Var) -> Result<Var> {
    let ratio = tape.div(sp, sq)?;
    let log_ratio = tape.log(ratio);
    let var_q = tape.mul(sq, sq)?;
    let diff = tape.sub(mq, mp)?;
    let diff_sq = tape.mul(diff, diff)?;
    let num = tape.add(var_q, diff_sq)?;
    let var_p = tape.mul(sp, sp)?;
    let two_var_p = tape.scale(var_p, 2.0);
    let frac = tape.div(num, two_var_p)?;
    let terms = tape.add(log_ratio, frac)?;
    let terms = tape.add_scalar(terms, -0.5);
    Ok(tape.sum_last(terms))
}

fn build(
    tape: &mut Tape,
    vars: &[Var],
    c: &RssmConfig,
    batch: &SequenceBatch,
    noise: &[Tensor],
) -> Result<Graph> {
    let b = batch.batch_size();
    let mut h = tape.leaf(Tensor::zeros(&[b, c.h_dim]));
    let mut obs_terms = Vec::new();
    let mut reward_terms = Vec::new();
    let mut kl_terms = Vec::new();
    let mut floored_terms = Vec::new();

    for t in 0..batch.len() {
        let x = tape.leaf(batch.obs[t].clone());
        let e1 = tanh_linear(tape, vars, Layer::Encoder1, x)?;
        let embedded = tanh_linear(tape, vars, Layer::Encoder2, e1)?;
        let post_in = tape.concat(&[h, embedded])?;
        let (mq, sq) = gaussian_head(
            tape,
            vars,
            Layer::PosteriorHidden,
            Layer::PosteriorOut,
            post_in,
            c,
        )?;
        let (mp, sp) = gaussian_head(tape, vars, Layer::PriorHidden, Layer::PriorOut, h, c)?;
        let eps = tape.leaf(noise[t].clone());
        let scaled = tape.mul(sq, eps)?;
        let s = tape.add(mq, scaled)?;

        let z = tape.concat(&[h, s])?;
        let obs_hidden = tanh_linear(tape, vars, Layer::ObsHidden, z)?;
        let obs_mean = linear(tape, vars, Layer::ObsOut, obs_hidden)?;
        obs_terms.push(gaussian_nll(tape, x, obs_mean, c.obs_dim, c.obs_std)?);

        if t > 0 {
            let r = tape.leaf(batch.rewards[t - 1].clone());
            let rh = tanh_linear(tape, vars, Layer::RewardHidden, z)?;
            let r_mean = linear(tape, vars, Layer::RewardOut, rh)?;
            let nll = gaussian_nll(tape, r, r_mean, 1, 1.0)?;
            reward_terms.push(tape.scale(nll, c.reward_scale));
        }

        let kl = kl_rows(tape, mq, sq, mp, sp)?;
        kl_terms.push(kl);
        floored_terms.push(tape.max_scalar(kl, c.free_nats));

        if t + 1 < batch.len() {
            let a = tape.leaf(batch.actions[t].clone());
            h = gru(tape, vars, h, s, a, c.h_dim)?;
        }
    }

    let total = |tape: &mut Tape, terms: &[Var]| -> Result<Var> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t)?;
        }
        Ok(tape.mean(acc))
    };
    let observation_nll = total(tape, &obs_terms)?;
    let reward_nll = total(tape, &reward_terms)?;
    let complexity = total(tape, &kl_terms)?;
    let floored = total(tape, &floored_terms)?;
    let recon = tape.add(observation_nll, reward_nll)?;
    let loss = tape.add(recon, floored)?;
    Ok(Graph {
        loss,
        observation_nll,
        reward_nll,
        complexity,
    })
}

fn draw_noise<R: Rng + ?Sized>(c: &RssmConfig, batch: &SequenceBatch, rng: &mut R) -> Vec<Tensor> {
    let b = batch.batch_size();
    (0..batch.len())
        .map(|_| {
            let data = (0..b * c.s_dim).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(vec![b, c.s_dim], data).expect("noise shape")
        })
        .collect()
}

fn evaluate<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &SequenceBatch,
    rng: &mut R,
    with_grad: bool,
) -> Result<(ElboReport, Option<Vec<Tensor>>)> {
    let c = params.config();
    batch.validate(c)?;
    let noise = draw_noise(c, batch, rng);
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone()))
        .collect();
    let g = build(&mut tape, &vars, c, batch, &noise)?;
    let scalar = |v: Var| tape.value(v).data()[0];
    let report = ElboReport {
        loss: scalar(g.loss),
        observation_nll: scalar(g.observation_nll),
        reward_nll: scalar(g.reward_nll),
        complexity: scalar(g.complexity),
    };
    if !report.loss.is_finite() {
        return Err(Error::NonFiniteLoss(LossBreakdown {
            observation_nll: report.observation_nll,
            reward_nll: report.reward_nll,
            complexity: report.complexity,
        }));
    }
    let grads = if with_grad {
        Some(tape.gradient(g.loss, &vars)?)
    } else {
        None
    };
    Ok((report, grads))
}

/// Negative ELBO of `batch` under `params`; `rng` supplies the
/// reparameterization noise.
pub fn elbo<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &SequenceBatch,
    rng: &mut R,
) -> Result<ElboReport> {
    evaluate(params, batch, rng, false).map(|(r, _)| r)
}

/// As [`elbo`], plus the gradient of the loss for every parameter tensor in
/// [`ModelParams::tensors`] order.
pub fn elbo_with_grad<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &SequenceBatch,
    rng: &mut R,
) -> Result<(ElboReport, Vec<Tensor>)> {
    evaluate(params, batch, rng, true).map(|(r, g)| (r, g.expect("requested gradient")))
}
