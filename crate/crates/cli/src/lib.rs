//! Configuration, metrics output and subcommand implementations behind the
//! `latent-mpc` binary.

pub mod commands;
pub mod config;
pub mod metrics;

pub use commands::{cmd_ablate, cmd_eval, cmd_plan_demo, cmd_train, run_ablation, AblationCell};
pub use config::RunConfig;
