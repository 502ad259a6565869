//! Recurrent state-space model.
//!
//! The latent state splits into a deterministic GRU path `h` and a
//! stochastic sample `s`. The generative side is
//! `h_t = gru(h_{t-1}, s_{t-1}, a_{t-1})`, `s_t ~ p(s_t | h_t)`,
//! `x_t, r_t ~ p(x_t, r_t | h_t, s_t)`; inference uses `q(s_t | h_t, x_t)`
//! with the observation first passed through a two-layer encoder.
//!
//! [`infer`] evaluates the networks on plain slices for rollouts and
//! filtering; [`elbo`] records the same computation on a tape for training.

pub mod checkpoint;
pub mod elbo;
pub mod infer;
mod params;

pub use elbo::{elbo, elbo_with_grad, ElboReport, SequenceBatch};
pub use infer::{decode, gru_step, posterior, prior, rollout_return, LatentSampling};
pub use params::{Layer, ModelParams};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RssmConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Size of the deterministic recurrent state.
    pub h_dim: usize,
    /// Size of the stochastic state.
    pub s_dim: usize,
    /// Width of every fully-connected hidden layer.
    pub hidden_dim: usize,
    /// Added to every softplus-parameterized standard deviation.
    pub min_std: f64,
    /// Per-step floor on the KL term; 0 disables it.
    pub free_nats: f64,
    /// Weight on the reward log-likelihood relative to observations.
    pub reward_scale: f64,
    /// Fixed standard deviation of the observation decoder.
    pub obs_std: f64,
}

impl RssmConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            h_dim: 64,
            s_dim: 16,
            hidden_dim: 64,
            min_std: 0.1,
            free_nats: 1.0,
            reward_scale: 1.0,
            obs_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("obs_dim", self.obs_dim),
            ("action_dim", self.action_dim),
            ("h_dim", self.h_dim),
            ("s_dim", self.s_dim),
            ("hidden_dim", self.hidden_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("rssm.{name} must be >= 1")));
        }
        if !(self.min_std > 0.0) {
            return Err(Error::Config("rssm.min_std must be > 0".into()));
        }
        if !(self.free_nats >= 0.0) {
            return Err(Error::Config("rssm.free_nats must be >= 0".into()));
        }
        if !(self.reward_scale >= 0.0) || !self.reward_scale.is_finite() {
            return Err(Error::Config("rssm.reward_scale must be >= 0".into()));
        }
        if !(self.obs_std > 0.0) || !self.obs_std.is_finite() {
            return Err(Error::Config("rssm.obs_std must be > 0".into()));
        }
        Ok(())
    }
}

/// `(h, s)` for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub h: Vec<f64>,
    pub s: Vec<f64>,
}

impl LatentState {
    pub fn zeros(config: &RssmConfig) -> Self {
        Self {
            h: vec![0.0; config.h_dim],
            s: vec![0.0; config.s_dim],
        }
    }
}

/// Diagonal Gaussian produced by a network head.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianHead {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + s * eps
            })
            .collect()
    }
}

/// `KL(q || p)` for diagonal Gaussians, summed over dimensions.
pub fn kl_diag_gaussian(q: &GaussianHead, p: &GaussianHead) -> Result<f64> {
    if q.dim() != p.dim() || q.std.len() != q.dim() || p.std.len() != p.dim() {
        return Err(Error::Shape {
            op: "kl_diag_gaussian",
            lhs: vec![q.dim()],
            rhs: vec![p.dim()],
        });
    }
    Ok((0..q.dim())
        .map(|d| {
            let (mq, sq, mp, sp) = (q.mean[d], q.std[d], p.mean[d], p.std[d]);
            (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn head(mean: &[f64], std: &[f64]) -> GaussianHead {
        GaussianHead {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    #[test]
    fn kl_closed_forms() {
        let a = head(&[0.3, -1.0], &[0.5, 2.0]);
        assert_eq!(kl_diag_gaussian(&a, &a).unwrap(), 0.0);
        let q = head(&[1.0], &[1.0]);
        let p = head(&[0.0], &[1.0]);
        assert!((kl_diag_gaussian(&q, &p).unwrap() - 0.5).abs() < 1e-15);
        assert!((kl_diag_gaussian(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_diag_gaussian(&q, &a).is_err());
    }

    #[test]
    fn kl_matches_monte_carlo() {
        // E_q[log q(x) - log p(x)] over 1e5 draws, within 3 standard errors.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let log_density = |g: &GaussianHead, x: &[f64]| -> f64 {
            x.iter()
                .enumerate()
                .map(|(d, v)| {
                    let z = (v - g.mean[d]) / g.std[d];
                    -0.5 * z * z - g.std[d].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                })
                .sum()
        };
        for trial in 0..3 {
            use rand::Rng;
            let dim = 3;
            let q = head(
                &(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
                &(0..dim).map(|_| rng.gen_range(0.3..1.5)).collect::<Vec<_>>(),
            );
            let p = head(
                &(0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>(),
                &(0..dim).map(|_| rng.gen_range(0.3..1.5)).collect::<Vec<_>>(),
            );
            let n = 100_000;
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let x = q.sample(&mut rng);
                    log_density(&q, &x) - log_density(&p, &x)
                })
                .collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let exact = kl_diag_gaussian(&q, &p).unwrap();
            assert!(exact >= 0.0);
            assert!(
                (mean - exact).abs() < 3.0 * se,
                "trial {trial}: mc {mean} exact {exact} se {se}"
            );
        }
    }

    #[test]
    fn config_validation() {
        let mut c = RssmConfig::new(2, 1);
        assert!(c.validate().is_ok());
        c.min_std = 0.0;
        assert!(c.validate().is_err());
        let mut c = RssmConfig::new(2, 1);
        c.s_dim = 0;
        assert!(c.validate().is_err());
        let mut c = RssmConfig::new(2, 1);
        c.free_nats = 0.0;
        assert!(c.validate().is_ok());
    }
}
