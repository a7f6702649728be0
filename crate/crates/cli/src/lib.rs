//! Config-driven experiment harness for `wmnet`: key generation, baseline
//! and watermarked training, extraction, attack sweeps and reports.

pub mod artifacts;
pub mod commands;
pub mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use wmnet::MasterSeed;

pub use commands::Context;
pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "wmnet", version, about = "Spread-spectrum watermarking of neural network weights")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed (up to 64 hex digits).
    #[arg(long, global = true, value_name = "HEX")]
    pub seed: Option<MasterSeed>,
    /// Overrides the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Key file; defaults to `<out>/key.json`.
    #[arg(long, global = true, value_name = "PATH")]
    pub key: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Derive the secret key and print the occupancy.
    Keygen,
    /// Train the non-watermarked reference model.
    TrainBaseline,
    /// Embed, freeze and train; fails if the fresh model does not decode.
    TrainWatermarked {
        /// Hex message of exactly ceil(l/4) digits, or `random`.
        #[arg(long, default_value = "random")]
        message: String,
    },
    /// Decode the watermark from a snapshot.
    Extract {
        /// Snapshot; defaults to `<out>/watermarked.wmns`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        message: Option<String>,
    },
    /// Run the configured attack sweeps.
    Attack {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        message: Option<String>,
    },
    /// Merge run artifacts into report.json and histogram dumps.
    Report,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let ctx = Context::new(cfg, cli.key.clone());
    match &cli.command {
        Command::Keygen => commands::keygen(&ctx).map(drop),
        Command::TrainBaseline => commands::train_baseline(&ctx).map(drop),
        Command::TrainWatermarked { message } => commands::train_watermarked(&ctx, Some(message)).map(drop),
        Command::Extract { model, message } => {
            commands::extract_cmd(&ctx, model.as_deref(), message.as_deref()).map(drop)
        }
        Command::Attack { model, message } => commands::attack(&ctx, model.as_deref(), message.as_deref()).map(drop),
        Command::Report => commands::report(&ctx).map(drop),
    }
}
