use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ActionSelection, PlanConfig};
use crate::error::{Error, Result};
use crate::rng::stream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Random-stream tags for per-candidate sampling. The noise stream of
/// candidate `k` is shared with [`super::cem`] so both planners see the
/// same Gaussian draws.
pub(crate) const COMPONENT_STREAM: u64 = 0;
pub(crate) const NOISE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    /// Flat `horizon x action_dim` mean sequence.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Diagonal Gaussian mixture over flattened action sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub horizon: usize,
    pub action_dim: usize,
    pub components: Vec<Component>,
}

/// Sampled action sequences and the component each was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub actions: Vec<Vec<f64>>,
    pub components: Vec<usize>,
}

impl GmmParams {
    /// Mixture for the first planning step of an episode: equal weights,
    /// `init_std` everywhere, and means at zero for `M = 1` or drawn
    /// uniformly from `[-spread, spread]` (clipped to bounds) otherwise so
    /// that components start apart.
    pub fn initial<R: Rng + ?Sized>(
        config: &PlanConfig,
        action_dim: usize,
        rng: &mut R,
    ) -> Self {
        let m = config.components;
        let d = config.horizon * action_dim;
        let spread = config.init_mean_spread;
        let components = (0..m)
            .map(|_| Component {
                weight: 1.0 / m as f64,
                mean: if m == 1 || spread == 0.0 {
                    vec![0.0; d]
                } else {
                    (0..d)
                        .map(|_| {
                            rng.gen_range(-spread..=spread)
                                .clamp(config.action_low, config.action_high)
                        })
                        .collect()
                },
                std: vec![config.init_std; d],
            })
            .collect();
        Self {
            horizon: config.horizon,
            action_dim,
            components,
        }
    }

    pub fn dim(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Checks the mixture invariants: weights sum to one within `1e-9`, are at
    /// least `pi_floor`, and stds are at least `sigma_floor`.
    pub fn validate(&self, sigma_floor: f64, pi_floor: f64) -> Result<()> {
        let d = self.dim();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}")));
        }
        for (m, c) in self.components.iter().enumerate() {
            if c.mean.len() != d || c.std.len() != d {
                return Err(Error::Shape {
                    op: "gmm component",
                    lhs: vec![d, d],
                    rhs: vec![c.mean.len(), c.std.len()],
                });
            }
            if !(c.weight >= pi_floor) {
                return Err(Error::Config(format!("component {m} weight {} below floor", c.weight)));
            }
            if c.std.iter().any(|s| !(*s >= sigma_floor)) {
                return Err(Error::Config(format!("component {m} std below floor")));
            }
        }
        Ok(())
    }

    /// `log N(a; mean_m, std_m)` for one component.
    pub fn component_log_density(&self, m: usize, a: &[f64]) -> f64 {
        let c = &self.components[m];
        a.iter()
            .zip(&c.mean)
            .zip(&c.std)
            .map(|((x, mu), s)| {
                let z = (x - mu) / s;
                -0.5 * z * z - s.ln() - 0.5 * LN_2PI
            })
            .sum()
    }

    /// `log pi_m + log N_m(a)` for every component.
    fn joint_log(&self, a: &[f64]) -> Vec<f64> {
        (0..self.num_components())
            .map(|m| self.components[m].weight.ln() + self.component_log_density(m, a))
            .collect()
    }

    /// Log mixture density, by log-sum-exp over components.
    pub fn log_density(&self, a: &[f64]) -> f64 {
        log_sum_exp(&self.joint_log(a))
    }

    /// Next step's starting mixture: every mean shifted one step earlier
    /// with the last step zero-filled, std reset to `init_std`, weights reset
    /// to `1/M`.
    pub fn warm_start(&self, init_std: f64) -> Self {
        let ad = self.action_dim;
        let m = self.num_components();
        let components = self
            .components
            .iter()
            .map(|c| {
                let mut mean = c.mean[ad.min(c.mean.len())..].to_vec();
                mean.resize(c.mean.len(), 0.0);
                Component {
                    weight: 1.0 / m as f64,
                    mean,
                    std: vec![init_std; c.std.len()],
                }
            })
            .collect();
        Self {
            horizon: self.horizon,
            action_dim: ad,
            components,
        }
    }

    /// Index of the highest-weight component (lowest index on ties).
    pub fn dominant_component(&self) -> usize {
        let mut best = 0;
        for (m, c) in self.components.iter().enumerate() {
            if c.weight > self.components[best].weight {
                best = m;
            }
        }
        best
    }

    /// The action sequence chosen for execution.
    pub fn select_sequence<R: Rng + ?Sized>(
        &self,
        selection: ActionSelection,
        low: f64,
        high: f64,
        rng: &mut R,
    ) -> Vec<f64> {
        match selection {
            ActionSelection::Mean => self.components[self.dominant_component()]
                .mean
                .iter()
                .map(|v| v.clamp(low, high))
                .collect(),
            ActionSelection::Sample => {
                let Candidates { mut actions, .. } = sample_candidates(self, 1, low, high, rng);
                actions.pop().expect("one candidate")
            }
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Ancestral sampling: component index from the mixture weights, then a
/// diagonal Gaussian draw, clipped to `[low, high]`.
///
/// One `u64` is taken from `rng`; candidate `k` then uses its own derived
/// streams, so the result does not depend on evaluation order.
pub fn sample_candidates<R: Rng + ?Sized>(
    phi: &GmmParams,
    count: usize,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Candidates {
    let base: u64 = rng.gen();
    let m = phi.num_components();
    let mut actions = Vec::with_capacity(count);
    let mut components = Vec::with_capacity(count);
    for k in 0..count as u64 {
        let comp = if m == 1 {
            0
        } else {
            let u: f64 = stream(base, &[k, COMPONENT_STREAM]).gen();
            pick_component(phi, u)
        };
        let c = &phi.components[comp];
        let mut noise = stream(base, &[k, NOISE_STREAM]);
        actions.push(
            c.mean
                .iter()
                .zip(&c.std)
                .map(|(mu, s)| {
                    let eps: f64 = StandardNormal.sample(&mut noise);
                    (mu + s * eps).clamp(low, high)
                })
                .collect(),
        );
        components.push(comp);
    }
    Candidates {
        actions,
        components,
    }
}

fn pick_component(phi: &GmmParams, u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (m, c) in phi.components.iter().enumerate() {
        if c.weight > 0.0 {
            last_positive = m;
        }
        cumulative += c.weight;
        if u < cumulative {
            return m;
        }
    }
    last_positive
}

/// Mixture density `sum_m pi_m N(a; mean_m, std_m)`.
pub fn gmm_density(phi: &GmmParams, a: &[f64]) -> f64 {
    phi.log_density(a).exp()
}

/// `eta[m][k]`: posterior probability that candidate `k` came from
/// component `m`. Computed in log space; each column sums to one.
pub fn responsibilities(phi: &GmmParams, candidates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = phi.num_components();
    let mut eta = vec![vec![0.0; candidates.len()]; m];
    for (k, a) in candidates.iter().enumerate() {
        let joint = phi.joint_log(a);
        let lse = log_sum_exp(&joint);
        for (row, j) in eta.iter_mut().zip(&joint) {
            row[k] = (j - lse).exp();
        }
    }
    eta
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixture(weights: &[f64], means: &[f64], std: f64) -> GmmParams {
        GmmParams {
            horizon: 1,
            action_dim: 1,
            components: weights
                .iter()
                .zip(means)
                .map(|(&w, &m)| Component {
                    weight: w,
                    mean: vec![m],
                    std: vec![std],
                })
                .collect(),
        }
    }

    #[test]
    fn degenerate_gaussian_returns_mean() {
        let mut phi = mixture(&[1.0], &[0.3], 1e-300);
        phi.components[0].mean = vec![0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = sample_candidates(&phi, 20, -1.0, 1.0, &mut rng);
        assert!(c.actions.iter().all(|a| a == &vec![0.3]));
        let phi = mixture(&[1.0], &[3.0], 1e-300);
        let c = sample_candidates(&phi, 5, -1.0, 1.0, &mut rng);
        assert!(c.actions.iter().all(|a| a == &vec![1.0]));
    }

    #[test]
    fn one_hot_weights_pick_first_component() {
        let phi = mixture(&[1.0, 0.0, 0.0], &[0.0, 0.5, -0.5], 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = sample_candidates(&phi, 1000, -1.0, 1.0, &mut rng);
        assert!(c.components.iter().all(|&m| m == 0));
    }

    #[test]
    fn balanced_component_counts_within_binomial_bound() {
        let phi = mixture(&[0.5, 0.5], &[-0.5, 0.5], 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let c = sample_candidates(&phi, n, -1.0, 1.0, &mut rng);
        let first = c.components.iter().filter(|&&m| m == 0).count() as f64;
        // sd of Binomial(1e4, 0.5) is 50.
        assert!((first - 5000.0).abs() <= 150.0, "{first}");
    }

    #[test]
    fn density_closed_forms() {
        let phi = mixture(&[1.0], &[0.2], 0.5);
        let x: f64 = 0.7;
        let expected = (-0.5 * (x - 0.2_f64).powi(2) / 0.25).exp()
            / (2.0 * std::f64::consts::PI * 0.25).sqrt();
        assert!((gmm_density(&phi, &[x]) - expected).abs() < 1e-15);

        // At the mean of a dominant narrow component the others vanish.
        let phi = mixture(&[0.6, 0.4], &[0.0, 5.0], 0.01);
        let expected = 0.6 * (2.0 * std::f64::consts::PI * 1e-4).powf(-0.5);
        let got = gmm_density(&phi, &[0.0]);
        assert!((got - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn responsibilities_normalize() {
        let phi = mixture(&[1.0], &[0.0], 1.0);
        let eta = responsibilities(&phi, &[vec![0.3], vec![-2.0]]);
        assert_eq!(eta, vec![vec![1.0, 1.0]]);

        let phi = mixture(&[0.5, 0.5], &[-5.0, 5.0], 0.1);
        let eta = responsibilities(&phi, &[vec![5.0]]);
        assert!(eta[0][0] < 1e-300 && eta[1][0] == 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let m = rng.gen_range(1..6);
            let mut w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            let phi = GmmParams {
                horizon: 3,
                action_dim: 2,
                components: w
                    .iter()
                    .map(|&wm| Component {
                        weight: wm,
                        mean: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        std: (0..6).map(|_| rng.gen_range(0.05..1.0)).collect(),
                    })
                    .collect(),
            };
            let cands: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let eta = responsibilities(&phi, &cands);
            for k in 0..10 {
                let s: f64 = eta.iter().map(|row| row[k]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn warm_start_shifts_and_resets() {
        let phi = GmmParams {
            horizon: 3,
            action_dim: 2,
            components: vec![
                Component {
                    weight: 0.9,
                    mean: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                    std: vec![0.01; 6],
                },
                Component {
                    weight: 0.1,
                    mean: vec![-1.0; 6],
                    std: vec![0.2; 6],
                },
            ],
        };
        let w = phi.warm_start(0.5);
        assert_eq!(w.components[0].mean, vec![3.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
        assert_eq!(w.components[1].mean, vec![-1.0, -1.0, -1.0, -1.0, 0.0, 0.0]);
        for c in &w.components {
            assert_eq!(c.weight, 0.5);
            assert_eq!(c.std, vec![0.5; 6]);
        }
        let one_step = GmmParams {
            horizon: 1,
            ..phi.clone()
        };
        let one_step = GmmParams {
            components: one_step
                .components
                .iter()
                .map(|c| Component {
                    mean: c.mean[..2].to_vec(),
                    std: c.std[..2].to_vec(),
                    ..c.clone()
                })
                .collect(),
            ..one_step
        };
        let w = one_step.warm_start(0.5);
        assert!(w.components.iter().all(|c| c.mean == vec![0.0, 0.0]));
    }

    #[test]
    fn initial_mixture_is_valid() {
        let cfg = PlanConfig::default();
        let phi = GmmParams::initial(&cfg, 2, &mut ChaCha8Rng::seed_from_u64(0));
        phi.validate(cfg.sigma_floor, cfg.pi_floor).unwrap();
        assert_eq!(phi.num_components(), 5);
        assert_ne!(phi.components[0].mean, phi.components[1].mean);
        let single = PlanConfig {
            components: 1,
            ..cfg
        };
        let phi = GmmParams::initial(&single, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(phi.components[0].mean, vec![0.0; 24]);
    }
}
