//! `vaelab` — train, evaluate and sample latent-variable models over
//! IDX-format image data, plus two analytic demonstrations (the 2-D ring
//! map and the 1-D posterior convergence sweep).

mod commands;
mod config;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "vaelab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct CheckpointArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model checkpoint to load.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a VAE; writes metrics.csv, model.ckpt and samples.pgm.
    TrainVae(CommonArgs),
    /// Train a column-conditioned CVAE; writes metrics.csv, model.ckpt
    /// and a condition/samples/truth sheet.
    TrainCvae(CommonArgs),
    /// Train the deterministic regressor baseline on the same task.
    TrainRegressor(CommonArgs),
    /// Per-example ELBO report for a trained VAE checkpoint.
    Eval(CheckpointArgs),
    /// Decode prior draws from a trained VAE checkpoint into a PGM grid.
    Sample(CheckpointArgs),
    /// Emit ring-map point sets (analytic, and optionally a trained 2-D
    /// decoder's samples).
    RingDemo(CommonArgs),
    /// Posterior convergence sweep: KL of the prescribed recognition
    /// model against the exact posterior over a decreasing σ list.
    AppendixSweep(CommonArgs),
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    let load = |common: &CommonArgs| -> Result<RunConfig, CliError> {
        Ok(RunConfig::from_sources(
            common.config.as_deref(),
            &common.set,
        )?)
    };
    match &cli.command {
        Command::TrainVae(a) => commands::cmd_train_vae(&load(a)?),
        Command::TrainCvae(a) => commands::cmd_train_cvae(&load(a)?),
        Command::TrainRegressor(a) => commands::cmd_train_regressor(&load(a)?),
        Command::Eval(a) => commands::cmd_eval(&load(&a.common)?, &a.checkpoint),
        Command::Sample(a) => commands::cmd_sample(&load(&a.common)?, &a.checkpoint),
        Command::RingDemo(a) => commands::cmd_ring_demo(&load(a)?),
        Command::AppendixSweep(a) => commands::cmd_appendix_sweep(&load(a)?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vaelab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
