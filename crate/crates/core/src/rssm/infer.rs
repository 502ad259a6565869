//! Tape-free evaluation of the model networks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GaussianHead, LatentState, Layer, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, softplus};

/// How a stochastic state is drawn from its Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentSampling {
    #[default]
    Sample,
    /// Take the mean; makes filtering and rollouts deterministic.
    Mean,
}

impl LatentSampling {
    pub fn draw<R: Rng + ?Sized>(self, head: &GaussianHead, rng: &mut R) -> Vec<f64> {
        match self {
            LatentSampling::Sample => head.sample(rng),
            LatentSampling::Mean => head.mean.clone(),
        }
    }
}

fn check(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: vec![want],
            rhs: vec![got],
        })
    }
}

/// `x W + b` for a single input row.
pub(crate) fn linear(params: &ModelParams, layer: Layer, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    linear_into(params, layer, x, &mut out);
    out
}

fn linear_into(params: &ModelParams, layer: Layer, x: &[f64], out: &mut Vec<f64>) {
    let w = params.weight(layer).data();
    out.clear();
    out.extend_from_slice(params.bias(layer).data());
    let n = out.len();
    for (xi, row) in x.iter().zip(w.chunks_exact(n)) {
        if *xi == 0.0 {
            continue;
        }
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

fn tanh_layer(params: &ModelParams, layer: Layer, x: &[f64]) -> Vec<f64> {
    let mut y = linear(params, layer, x);
    y.iter_mut().for_each(|v| *v = v.tanh());
    y
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Splits a `2 * s_dim` head output into mean and floored std.
fn gaussian(raw: Vec<f64>, s_dim: usize, min_std: f64) -> GaussianHead {
    GaussianHead {
        std: raw[s_dim..].iter().map(|&v| softplus(v) + min_std).collect(),
        mean: raw[..s_dim].to_vec(),
    }
}

/// One GRU step on input `concat(prev.s, action)` with hidden state `prev.h`.
pub fn gru_step(params: &ModelParams, prev: &LatentState, action: &[f64]) -> Result<Vec<f64>> {
    let c = params.config();
    check("gru_step h", prev.h.len(), c.h_dim)?;
    check("gru_step s", prev.s.len(), c.s_dim)?;
    check("gru_step action", action.len(), c.action_dim)?;
    let hd = c.h_dim;
    let gx = linear(params, Layer::GruInput, &concat(&prev.s, action));
    let gh = linear(params, Layer::GruHidden, &prev.h);
    Ok((0..hd)
        .map(|j| {
            let reset = sigmoid(gx[j] + gh[j]);
            let update = sigmoid(gx[hd + j] + gh[hd + j]);
            let candidate = (gx[2 * hd + j] + reset * gh[2 * hd + j]).tanh();
            (1.0 - update) * candidate + update * prev.h[j]
        })
        .collect())
}

/// `p(s_t | h_t)`.
pub fn prior(params: &ModelParams, h: &[f64]) -> Result<GaussianHead> {
    let c = params.config();
    check("prior h", h.len(), c.h_dim)?;
    let hidden = tanh_layer(params, Layer::PriorHidden, h);
    Ok(gaussian(
        linear(params, Layer::PriorOut, &hidden),
        c.s_dim,
        c.min_std,
    ))
}

/// Two-layer observation embedding.
pub fn encode(params: &ModelParams, obs: &[f64]) -> Result<Vec<f64>> {
    check("encode obs", obs.len(), params.config().obs_dim)?;
    let e1 = tanh_layer(params, Layer::Encoder1, obs);
    Ok(tanh_layer(params, Layer::Encoder2, &e1))
}

/// `q(s_t | h_t, x_t)`.
pub fn posterior(params: &ModelParams, h: &[f64], obs: &[f64]) -> Result<GaussianHead> {
    let c = params.config();
    check("posterior h", h.len(), c.h_dim)?;
    let embedded = encode(params, obs)?;
    let hidden = tanh_layer(params, Layer::PosteriorHidden, &concat(h, &embedded));
    Ok(gaussian(
        linear(params, Layer::PosteriorOut, &hidden),
        c.s_dim,
        c.min_std,
    ))
}

/// Observation and reward heads of `p(x_t, r_t | h_t, s_t)`. The observation
/// std is `obs_std`; the reward std is 1.
pub fn decode(params: &ModelParams, h: &[f64], s: &[f64]) -> Result<(GaussianHead, GaussianHead)> {
    let c = params.config();
    check("decode h", h.len(), c.h_dim)?;
    check("decode s", s.len(), c.s_dim)?;
    let z = concat(h, s);
    let obs_mean = linear(
        params,
        Layer::ObsOut,
        &tanh_layer(params, Layer::ObsHidden, &z),
    );
    let reward_mean = reward_mean_z(params, &z);
    Ok((
        GaussianHead {
            std: vec![c.obs_std; obs_mean.len()],
            mean: obs_mean,
        },
        GaussianHead {
            mean: vec![reward_mean],
            std: vec![1.0],
        },
    ))
}

fn reward_mean_z(params: &ModelParams, z: &[f64]) -> f64 {
    let hidden = tanh_layer(params, Layer::RewardHidden, z);
    linear(params, Layer::RewardOut, &hidden)[0]
}

/// Sum of predicted reward means along an open-loop latent rollout.
///
/// `actions` is a flat `horizon x action_dim` sequence. Each step runs the
/// GRU, draws `s` from the prior and decodes the reward mean. A non-finite
/// reward is reported as [`Error::NonFiniteReward`] with the step index and
/// zeroed candidate/member indices for the caller to fill in.
pub fn rollout_return<R: Rng + ?Sized>(
    params: &ModelParams,
    start: &LatentState,
    actions: &[f64],
    sampling: LatentSampling,
    rng: &mut R,
) -> Result<f64> {
    let c = params.config();
    check("rollout h", start.h.len(), c.h_dim)?;
    check("rollout s", start.s.len(), c.s_dim)?;
    if !actions.len().is_multiple_of(c.action_dim) {
        return Err(Error::Shape {
            op: "rollout actions",
            lhs: vec![c.action_dim],
            rhs: vec![actions.len()],
        });
    }
    let (hd, sd) = (c.h_dim, c.s_dim);
    // Same arithmetic as gru_step / prior / decode, reusing buffers.
    let mut h = start.h.clone();
    let mut z = Vec::with_capacity(hd + sd + c.action_dim);
    let (mut gx, mut gh, mut hidden, mut raw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut s = start.s.clone();
    let mut total = 0.0;
    for (step, action) in actions.chunks_exact(c.action_dim).enumerate() {
        z.clear();
        z.extend_from_slice(&s);
        z.extend_from_slice(action);
        linear_into(params, Layer::GruInput, &z, &mut gx);
        linear_into(params, Layer::GruHidden, &h, &mut gh);
        for j in 0..hd {
            let reset = sigmoid(gx[j] + gh[j]);
            let update = sigmoid(gx[hd + j] + gh[hd + j]);
            let candidate = (gx[2 * hd + j] + reset * gh[2 * hd + j]).tanh();
            h[j] = (1.0 - update) * candidate + update * h[j];
        }
        linear_into(params, Layer::PriorHidden, &h, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        linear_into(params, Layer::PriorOut, &hidden, &mut raw);
        match sampling {
            LatentSampling::Mean => s.copy_from_slice(&raw[..sd]),
            LatentSampling::Sample => {
                for (d, sv) in s.iter_mut().enumerate() {
                    let std = softplus(raw[sd + d]) + c.min_std;
                    let eps: f64 = StandardNormal.sample(rng);
                    *sv = raw[d] + std * eps;
                }
            }
        }
        z.clear();
        z.extend_from_slice(&h);
        z.extend_from_slice(&s);
        linear_into(params, Layer::RewardHidden, &z, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        linear_into(params, Layer::RewardOut, &hidden, &mut raw);
        let r = raw[0];
        if !r.is_finite() {
            return Err(Error::NonFiniteReward {
                candidate: 0,
                member: 0,
                step,
            });
        }
        total += r;
    }
    Ok(total)
}
