//! Plain-text `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! override earlier ones, so `--set` flags applied after the file win.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

use latent_mpc::agent::{AgentConfig, LoopConfig};
use latent_mpc::ensemble::TrainConfig;
use latent_mpc::envs;
use latent_mpc::planner::{ActionSelection, PlanConfig};
use latent_mpc::rssm::RssmConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: String,
    pub rssm: RssmConfig,
    pub plan: PlanConfig,
    pub train: TrainConfig,
    pub agent: AgentConfig,
    pub ensemble_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Write measured wall-clock seconds into metrics.csv instead of 0.
    pub wall_clock: bool,
    /// Checkpoints retained in the output directory.
    pub keep_checkpoints: usize,
    /// Seeds per cell of the ablation grid.
    pub ablate_seeds: usize,
    /// Trailing episodes averaged per ablation run.
    pub ablate_last: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = envs::make("pendulum_po").expect("built-in env");
        let spec = env.spec();
        Self {
            env: spec.name.to_string(),
            rssm: RssmConfig::new(spec.obs_dim, spec.action_dim),
            plan: PlanConfig::default(),
            train: TrainConfig::default(),
            agent: AgentConfig::default(),
            ensemble_size: 5,
            seed: 0,
            out: PathBuf::from("out"),
            wall_clock: false,
            keep_checkpoints: 3,
            ablate_seeds: 4,
            ablate_last: 5,
        }
    }
}

/// Every accepted key with a short description.
pub const KEYS: &[(&str, &str)] = &[
    ("env", "environment name (pendulum_po, pointmass_po)"),
    ("seed", "master seed"),
    ("out", "output directory"),
    ("ensemble.size", "ensemble members E"),
    ("rssm.h_dim", "deterministic state size"),
    ("rssm.s_dim", "stochastic state size"),
    ("rssm.hidden", "hidden layer width"),
    ("rssm.min_std", "std floor of latent Gaussians"),
    ("rssm.free_nats", "per-step KL floor (0 disables)"),
    ("rssm.reward_scale", "weight of the reward likelihood"),
    ("rssm.obs_std", "fixed std of the observation decoder"),
    ("plan.K", "candidates per iteration"),
    ("plan.U", "planner iterations"),
    ("plan.T", "planning horizon"),
    ("plan.lambda", "inverted step size"),
    ("plan.kappa", "entropy weight"),
    ("plan.elite_fraction", "fraction of candidates passing the threshold"),
    ("plan.M", "mixture components"),
    ("plan.action_low", "lower action bound"),
    ("plan.action_high", "upper action bound"),
    ("plan.sigma_floor", "component std floor"),
    ("plan.pi_floor", "component weight floor"),
    ("plan.init_std", "std of fresh and warm-started components"),
    ("plan.init_spread", "half-width of initial component means"),
    ("plan.selection", "executed sequence: sample or mean"),
    ("train.lr", "Adam learning rate"),
    ("train.batch", "segments per batch"),
    ("train.seq_len", "observations per segment"),
    ("train.grad_clip", "global gradient norm clip"),
    ("train.weight_decay", "L2 weight decay"),
    ("agent.seed_episodes", "random episodes before training"),
    ("agent.train_steps", "optimizer steps per outer iteration"),
    ("agent.outer_iterations", "outer iterations"),
    ("agent.noise", "exploration noise std"),
    ("agent.eval_every", "evaluation episode cadence (0 = never)"),
    ("output.wall_clock", "record wall-clock seconds in metrics.csv"),
    ("output.keep_checkpoints", "checkpoints kept"),
    ("ablate.seeds", "seeds per ablation cell"),
    ("ablate.last", "trailing episodes averaged per ablation run"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value `{value}` for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("invalid value `{value}` for {key}: expected true or false"),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => {
                let env = envs::make(v)?;
                let spec = env.spec();
                self.env = spec.name.to_string();
                self.rssm.obs_dim = spec.obs_dim;
                self.rssm.action_dim = spec.action_dim;
            }
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "ensemble.size" => self.ensemble_size = parse(key, v)?,
            "rssm.h_dim" => self.rssm.h_dim = parse(key, v)?,
            "rssm.s_dim" => self.rssm.s_dim = parse(key, v)?,
            "rssm.hidden" => self.rssm.hidden_dim = parse(key, v)?,
            "rssm.min_std" => self.rssm.min_std = parse(key, v)?,
            "rssm.free_nats" => self.rssm.free_nats = parse(key, v)?,
            "rssm.reward_scale" => self.rssm.reward_scale = parse(key, v)?,
            "rssm.obs_std" => self.rssm.obs_std = parse(key, v)?,
            "plan.K" => self.plan.candidates = parse(key, v)?,
            "plan.U" => self.plan.iterations = parse(key, v)?,
            "plan.T" => self.plan.horizon = parse(key, v)?,
            "plan.lambda" => self.plan.lambda = parse(key, v)?,
            "plan.kappa" => self.plan.kappa = parse(key, v)?,
            "plan.elite_fraction" => self.plan.elite_fraction = parse(key, v)?,
            "plan.M" => self.plan.components = parse(key, v)?,
            "plan.action_low" => self.plan.action_low = parse(key, v)?,
            "plan.action_high" => self.plan.action_high = parse(key, v)?,
            "plan.sigma_floor" => self.plan.sigma_floor = parse(key, v)?,
            "plan.pi_floor" => self.plan.pi_floor = parse(key, v)?,
            "plan.init_std" => self.plan.init_std = parse(key, v)?,
            "plan.init_spread" => self.plan.init_mean_spread = parse(key, v)?,
            "plan.selection" => {
                self.plan.selection = match v {
                    "sample" => ActionSelection::Sample,
                    "mean" => ActionSelection::Mean,
                    _ => bail!("invalid value `{v}` for plan.selection: expected sample or mean"),
                }
            }
            "train.lr" => self.train.learning_rate = parse(key, v)?,
            "train.batch" => self.train.batch_size = parse(key, v)?,
            "train.seq_len" => self.train.seq_len = parse(key, v)?,
            "train.grad_clip" => self.train.grad_clip = parse(key, v)?,
            "train.weight_decay" => self.train.weight_decay = parse(key, v)?,
            "agent.seed_episodes" => self.agent.seed_episodes = parse(key, v)?,
            "agent.train_steps" => self.agent.train_steps = parse(key, v)?,
            "agent.outer_iterations" => self.agent.outer_iterations = parse(key, v)?,
            "agent.noise" => self.agent.exploration_noise = parse(key, v)?,
            "agent.eval_every" => self.agent.eval_every = parse(key, v)?,
            "output.wall_clock" => self.wall_clock = parse_bool(key, v)?,
            "output.keep_checkpoints" => self.keep_checkpoints = parse(key, v)?,
            "ablate.seeds" => self.ablate_seeds = parse(key, v)?,
            "ablate.last" => self.ablate_last = parse(key, v)?,
            other => {
                let valid: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                bail!("unknown config key `{other}`; valid keys: {}", valid.join(", "))
            }
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, got `{assignment}`"))?;
        self.set(key, value)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.assign(line).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::default();
        config
            .apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
        Ok(config)
    }

    /// The current value of every key, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.plan;
        let selection = match p.selection {
            ActionSelection::Sample => "sample",
            ActionSelection::Mean => "mean",
        };
        let values = [
            self.env.clone(),
            self.seed.to_string(),
            self.out.display().to_string(),
            self.ensemble_size.to_string(),
            self.rssm.h_dim.to_string(),
            self.rssm.s_dim.to_string(),
            self.rssm.hidden_dim.to_string(),
            self.rssm.min_std.to_string(),
            self.rssm.free_nats.to_string(),
            self.rssm.reward_scale.to_string(),
            self.rssm.obs_std.to_string(),
            p.candidates.to_string(),
            p.iterations.to_string(),
            p.horizon.to_string(),
            p.lambda.to_string(),
            p.kappa.to_string(),
            p.elite_fraction.to_string(),
            p.components.to_string(),
            p.action_low.to_string(),
            p.action_high.to_string(),
            p.sigma_floor.to_string(),
            p.pi_floor.to_string(),
            p.init_std.to_string(),
            p.init_mean_spread.to_string(),
            selection.to_string(),
            self.train.learning_rate.to_string(),
            self.train.batch_size.to_string(),
            self.train.seq_len.to_string(),
            self.train.grad_clip.to_string(),
            self.train.weight_decay.to_string(),
            self.agent.seed_episodes.to_string(),
            self.agent.train_steps.to_string(),
            self.agent.outer_iterations.to_string(),
            self.agent.exploration_noise.to_string(),
            self.agent.eval_every.to_string(),
            self.wall_clock.to_string(),
            self.keep_checkpoints.to_string(),
            self.ablate_seeds.to_string(),
            self.ablate_last.to_string(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    /// `key=value` lines that parse back to this configuration.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            rssm: self.rssm.clone(),
            plan: self.plan.clone(),
            train: self.train.clone(),
            agent: self.agent.clone(),
            ensemble_size: self.ensemble_size,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loop_config().validate()?;
        Ok(())
    }
}
