use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use latent_mpc::agent::{outer_loop, run_control_episode, DatasetWriter, EpisodeMode, History};
use latent_mpc::ensemble::Ensemble;
use latent_mpc::envs::{self, BimodalLandscape, QuadraticLandscape};
use latent_mpc::planner::{plan, GmmParams, PlanResult, TrajectoryModel};
use latent_mpc::rng::{derive_seed, stream};
use latent_mpc::Execution;

use crate::config::RunConfig;
use crate::metrics::{mean_std, median, percentile, MetricsWriter};

const EVAL_STREAM: u64 = 0xe7a1;

fn prepare_out(out: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), config.to_text())?;
    Ok(())
}

fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:04}.lmpc"))
}

#[derive(Debug)]
pub struct TrainSummary {
    pub history: History,
    pub final_checkpoint: PathBuf,
}

/// Runs the outer loop, writing `config.txt`, `metrics.csv`,
/// `dataset.lmpd` and per-iteration checkpoints into `config.out`.
pub fn cmd_train(config: &RunConfig, execution: Execution) -> Result<TrainSummary> {
    config.validate()?;
    let env = envs::make(&config.env)?;
    let out = &config.out;
    prepare_out(out, config)?;
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.csv"), config.wall_clock)?;
    let spec = env.spec();
    let mut dataset_file = DatasetWriter::create(&out.join("dataset.lmpd"), spec.obs_dim, spec.action_dim)?;
    let mut written_episodes = 0;
    let mut final_checkpoint = PathBuf::new();
    let (history, _, _) = outer_loop(env.as_ref(), &config.loop_config(), execution, |row, ensemble, data| {
        metrics.write(row)?;
        for episode in &data.episodes[written_episodes..] {
            dataset_file.write(episode)?;
        }
        written_episodes = data.episodes.len();
        let path = checkpoint_path(&ckpt_dir, row.iteration);
        ensemble.save(&mut BufWriter::new(File::create(&path)?))?;
        let keep = config.keep_checkpoints.max(1);
        if row.iteration >= keep {
            let stale = checkpoint_path(&ckpt_dir, row.iteration - keep);
            if stale.exists() {
                fs::remove_file(stale)?;
            }
        }
        final_checkpoint = path;
        Ok::<(), anyhow::Error>(())
    })?;
    let rewards = history.episode_rewards();
    let tail = &rewards[rewards.len().saturating_sub(5)..];
    println!(
        "train done: {} iterations, {} episodes, final-5 mean reward {:.3}, checkpoint {}",
        config.agent.outer_iterations,
        history.iterations.last().map_or(0, |r| r.episodes),
        tail.iter().sum::<f64>() / tail.len().max(1) as f64,
        final_checkpoint.display()
    );
    Ok(TrainSummary {
        history,
        final_checkpoint,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub rewards: Vec<f64>,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

/// `episodes` noise-free control episodes with the ensemble in `checkpoint`.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    episodes: usize,
    seed: u64,
    execution: Execution,
) -> Result<EvalSummary> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    config.plan.validate()?;
    let env = envs::make(&config.env)?;
    let file = File::open(checkpoint).with_context(|| format!("opening {}", checkpoint.display()))?;
    let ensemble = Ensemble::load(&mut BufReader::new(file), seed)
        .with_context(|| format!("reading {}", checkpoint.display()))?;
    let spec = env.spec();
    if ensemble.config().obs_dim != spec.obs_dim || ensemble.config().action_dim != spec.action_dim {
        bail!("checkpoint dims do not match env {}", spec.name);
    }
    let mut rewards = Vec::with_capacity(episodes);
    for n in 0..episodes as u64 {
        let outcome = run_control_episode(
            env.as_ref(),
            &ensemble,
            &config.plan,
            0.0,
            EpisodeMode::Evaluate,
            derive_seed(seed, &[EVAL_STREAM, n]),
            execution,
        );
        if let Some(e) = outcome.error {
            return Err(e.into());
        }
        info!("eval episode {n}: reward {:.3}", outcome.reward);
        rewards.push(outcome.reward);
    }
    let summary = EvalSummary {
        median: median(&rewards),
        p5: percentile(&rewards, 5.0),
        p95: percentile(&rewards, 95.0),
        rewards,
    };
    println!(
        "eval: {episodes} episodes, median {:.3}, p5 {:.3}, p95 {:.3}",
        summary.median, summary.p5, summary.p95
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub ensemble_size: usize,
    pub components: usize,
    pub candidates: usize,
    /// Per seed: mean reward of the last `ablate_last` control episodes.
    pub scores: Vec<f64>,
}

impl AblationCell {
    pub fn median(&self) -> f64 {
        median(&self.scores)
    }
}

/// The grid `{E, 1} x {M, 1}` with the configured `E` and `M`. `K` is scaled
/// per cell so `K * E` matches the configured budget.
pub fn run_ablation(config: &RunConfig, execution: Execution) -> Result<Vec<AblationCell>> {
    config.validate()?;
    let env = envs::make(&config.env)?;
    let budget = config.plan.candidates * config.ensemble_size;
    let root = config.out.join("ablate");
    prepare_out(&config.out, config)?;
    let mut cells = Vec::new();
    for e in [config.ensemble_size, 1] {
        for m in [config.plan.components, 1] {
            let mut cell_config = config.clone();
            cell_config.ensemble_size = e;
            cell_config.plan.components = m;
            cell_config.plan.candidates = budget / e;
            let mut scores = Vec::with_capacity(config.ablate_seeds);
            for s in 0..config.ablate_seeds as u64 {
                cell_config.seed = config.seed + s;
                let dir = root.join(format!("E{e}_M{m}")).join(format!("seed{}", cell_config.seed));
                cell_config.out = dir.clone();
                prepare_out(&dir, &cell_config)?;
                let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"), config.wall_clock)?;
                let (history, _, _) =
                    outer_loop(env.as_ref(), &cell_config.loop_config(), execution, |row, _, _| {
                        metrics.write(row)
                    })?;
                let rewards = history.episode_rewards();
                let tail = &rewards[rewards.len().saturating_sub(config.ablate_last)..];
                let score = if tail.is_empty() {
                    f64::NAN
                } else {
                    tail.iter().sum::<f64>() / tail.len() as f64
                };
                info!("ablation E={e} M={m} seed={}: {score:.3}", cell_config.seed);
                scores.push(score);
            }
            cells.push(AblationCell {
                ensemble_size: e,
                components: m,
                candidates: budget / e,
                scores,
            });
        }
    }
    Ok(cells)
}

/// Runs the ablation grid and writes `ablation.csv`; returns the printed
/// table.
pub fn cmd_ablate(config: &RunConfig, execution: Execution) -> Result<(Vec<AblationCell>, String)> {
    let cells = run_ablation(config, execution)?;
    let mut csv = csv::Writer::from_path(config.out.join("ablation.csv"))?;
    csv.write_record([
        "model_uncertainty",
        "action_uncertainty",
        "E",
        "M",
        "K",
        "mean_reward",
        "std_reward",
        "seeds",
    ])?;
    let mut table = format!(
        "{:<6} {:<6} {:>3} {:>3} {:>5} {:>22}\n",
        "model", "action", "E", "M", "K", "reward (mean +- std)"
    );
    let mark = |on: bool| if on { "yes" } else { "-" };
    for c in &cells {
        let (mean, std) = mean_std(&c.scores);
        let model_u = c.ensemble_size > 1;
        let action_u = c.components > 1;
        csv.write_record([
            mark(model_u).to_string(),
            mark(action_u).to_string(),
            c.ensemble_size.to_string(),
            c.components.to_string(),
            c.candidates.to_string(),
            mean.to_string(),
            std.to_string(),
            c.scores.len().to_string(),
        ])?;
        table.push_str(&format!(
            "{:<6} {:<6} {:>3} {:>3} {:>5} {:>12.3} +- {:<7.3}\n",
            mark(model_u),
            mark(action_u),
            c.ensemble_size,
            c.components,
            c.candidates,
            mean,
            std
        ));
    }
    csv.flush()?;
    print!("{table}");
    Ok((cells, table))
}

pub const LANDSCAPES: [&str; 2] = ["bimodal", "quadratic"];

/// Plans against an analytic reward and writes every iteration's mixture to
/// `plan_trace.csv` (iteration 0 is the initial mixture).
pub fn cmd_plan_demo(
    config: &RunConfig,
    landscape: &str,
    execution: Execution,
) -> Result<PlanResult> {
    config.plan.validate()?;
    let model: Box<dyn DemoModel> = match landscape {
        "bimodal" => Box::new(BimodalLandscape::default()),
        "quadratic" => Box::new(QuadraticLandscape { target: 0.0 }),
        other => bail!("unknown landscape `{other}`; expected one of {LANDSCAPES:?}"),
    };
    prepare_out(&config.out, config)?;
    let mut rng = stream(config.seed, &[]);
    let init = GmmParams::initial(&config.plan, 1, &mut rng);
    let result = model.plan(&init, config, execution, &mut rng)?;
    let path = config.out.join("plan_trace.csv");
    let mut out = csv::Writer::from_path(&path)?;
    out.write_record(["iteration", "component", "weight", "mean", "std"])?;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    for (j, phi) in std::iter::once(&init).chain(&result.trace).enumerate() {
        for (m, c) in phi.components.iter().enumerate() {
            out.write_record([
                j.to_string(),
                m.to_string(),
                c.weight.to_string(),
                join(&c.mean),
                join(&c.std),
            ])?;
        }
    }
    out.flush()?;
    let mut stdout = std::io::stdout().lock();
    for c in &result.phi.components {
        writeln!(stdout, "pi {:.4}  mean {:?}", c.weight, c.mean)?;
    }
    writeln!(stdout, "trace written to {}", path.display())?;
    Ok(result)
}

/// Object-safe wrapper so the demo can pick a landscape at runtime.
trait DemoModel {
    fn plan(
        &self,
        init: &GmmParams,
        config: &RunConfig,
        execution: Execution,
        rng: &mut latent_mpc::rng::StreamRng,
    ) -> Result<PlanResult>;
}

impl<T: TrajectoryModel> DemoModel for T {
    fn plan(
        &self,
        init: &GmmParams,
        config: &RunConfig,
        execution: Execution,
        rng: &mut latent_mpc::rng::StreamRng,
    ) -> Result<PlanResult> {
        Ok(plan(self, init, &config.plan, execution, rng)?)
    }
}
