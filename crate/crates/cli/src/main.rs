use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use latent_mpc::Execution;
use latent_mpc_cli::{cmd_ablate, cmd_eval, cmd_plan_demo, cmd_train, RunConfig};

#[derive(Parser)]
#[command(name = "latent-mpc", version, about = "Latent MPC with model ensembles and mixture planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect data, train the ensemble and control, writing metrics and checkpoints.
    Train(Common),
    /// Noise-free control episodes with a saved ensemble.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Ensemble size and mixture size ablation grid.
    Ablate(Common),
    /// Run the planner on an analytic reward landscape.
    PlanDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "bimodal")]
        landscape: String,
    },
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, Execution)> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for assignment in &self.set {
            config.assign(assignment).context("--set")?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        let execution = match self.threads {
            Some(0) => anyhow::bail!("--threads must be >= 1"),
            Some(1) => Execution::Sequential,
            Some(n) => {
                configure_threads(n)?;
                Execution::Parallel
            }
            None => Execution::Parallel,
        };
        Ok((config, execution))
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_: usize) -> Result<()> {
    log::warn!("built without the `parallel` feature; running sequentially");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let (config, execution) = common.resolve()?;
            cmd_train(&config, execution)?;
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let (config, execution) = common.resolve()?;
            cmd_eval(&config, &checkpoint, episodes, config.seed, execution)?;
        }
        Command::Ablate(common) => {
            let (config, execution) = common.resolve()?;
            cmd_ablate(&config, execution)?;
        }
        Command::PlanDemo { common, landscape } => {
            let (config, execution) = common.resolve()?;
            cmd_plan_demo(&config, &landscape, execution)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp_secs()
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
