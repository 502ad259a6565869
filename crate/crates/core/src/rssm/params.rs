use rand::Rng;

use super::RssmConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every fully-connected layer of the model. Each owns a `[in, out]` weight
/// and an `[out]` bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    /// `concat(s, a) -> 3h` (reset, update, candidate).
    GruInput,
    /// `h -> 3h`.
    GruHidden,
    PriorHidden,
    PriorOut,
    Encoder1,
    Encoder2,
    PosteriorHidden,
    PosteriorOut,
    ObsHidden,
    ObsOut,
    RewardHidden,
    RewardOut,
}

impl Layer {
    pub const ALL: [Layer; 12] = [
        Layer::GruInput,
        Layer::GruHidden,
        Layer::PriorHidden,
        Layer::PriorOut,
        Layer::Encoder1,
        Layer::Encoder2,
        Layer::PosteriorHidden,
        Layer::PosteriorOut,
        Layer::ObsHidden,
        Layer::ObsOut,
        Layer::RewardHidden,
        Layer::RewardOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Layer::GruInput => "gru_input",
            Layer::GruHidden => "gru_hidden",
            Layer::PriorHidden => "prior_hidden",
            Layer::PriorOut => "prior_out",
            Layer::Encoder1 => "encoder_1",
            Layer::Encoder2 => "encoder_2",
            Layer::PosteriorHidden => "posterior_hidden",
            Layer::PosteriorOut => "posterior_out",
            Layer::ObsHidden => "obs_hidden",
            Layer::ObsOut => "obs_out",
            Layer::RewardHidden => "reward_hidden",
            Layer::RewardOut => "reward_out",
        }
    }

    /// `(fan_in, fan_out)` under `config`.
    pub fn dims(self, c: &RssmConfig) -> (usize, usize) {
        match self {
            Layer::GruInput => (c.s_dim + c.action_dim, 3 * c.h_dim),
            Layer::GruHidden => (c.h_dim, 3 * c.h_dim),
            Layer::PriorHidden => (c.h_dim, c.hidden_dim),
            Layer::PriorOut => (c.hidden_dim, 2 * c.s_dim),
            Layer::Encoder1 => (c.obs_dim, c.hidden_dim),
            Layer::Encoder2 => (c.hidden_dim, c.hidden_dim),
            Layer::PosteriorHidden => (c.h_dim + c.hidden_dim, c.hidden_dim),
            Layer::PosteriorOut => (c.hidden_dim, 2 * c.s_dim),
            Layer::ObsHidden => (c.h_dim + c.s_dim, c.hidden_dim),
            Layer::ObsOut => (c.hidden_dim, c.obs_dim),
            Layer::RewardHidden => (c.h_dim + c.s_dim, c.hidden_dim),
            Layer::RewardOut => (c.hidden_dim, 1),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// All weights of one model. Tensors are stored as
/// `[layer0.weight, layer0.bias, layer1.weight, ...]` in [`Layer::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: RssmConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &RssmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::with_capacity(2 * Layer::ALL.len());
        for layer in Layer::ALL {
            let (fan_in, fan_out) = layer.dims(config);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            tensors.push(Tensor::new(vec![fan_in, fan_out], w)?);
            tensors.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn zeros(config: &RssmConfig) -> Result<Self> {
        config.validate()?;
        let tensors = Layer::ALL
            .iter()
            .flat_map(|l| {
                let (i, o) = l.dims(config);
                [Tensor::zeros(&[i, o]), Tensor::zeros(&[o])]
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Rebuilds parameters from `(name, tensor)` pairs in any order; every
    /// expected name must be present exactly once with the right shape.
    pub fn from_named(config: &RssmConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut out = Self::zeros(config)?;
        let names = Self::names();
        let mut seen = vec![false; names.len()];
        for (name, tensor) in named {
            let idx = names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{name}`")))?;
            if seen[idx] {
                return Err(Error::Format(format!("duplicate parameter `{name}`")));
            }
            if tensor.shape() != out.tensors[idx].shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    lhs: out.tensors[idx].shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            seen[idx] = true;
            out.tensors[idx] = tensor;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("missing parameter `{}`", names[missing])));
        }
        Ok(out)
    }

    pub fn names() -> Vec<String> {
        Layer::ALL
            .iter()
            .flat_map(|l| [format!("{}.weight", l.name()), format!("{}.bias", l.name())])
            .collect()
    }

    pub fn config(&self) -> &RssmConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn weight(&self, layer: Layer) -> &Tensor {
        &self.tensors[2 * layer.index()]
    }

    pub fn bias(&self, layer: Layer) -> &Tensor {
        &self.tensors[2 * layer.index() + 1]
    }

    pub fn weight_mut(&mut self, layer: Layer) -> &mut Tensor {
        &mut self.tensors[2 * layer.index()]
    }

    pub fn bias_mut(&mut self, layer: Layer) -> &mut Tensor {
        &mut self.tensors[2 * layer.index() + 1]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}
