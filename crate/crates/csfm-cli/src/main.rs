//! `csfm` — train, run, and inspect the super-resolution models.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "csfm",
    version,
    about = "Single-image super-resolution: training, inference, evaluation, and analysis."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model as described by a config file.
    Train {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Upscale one PNG with a trained checkpoint.
    Sr {
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Score upscaling quality over a directory of high-resolution PNGs.
    Eval {
        /// Directory of ground-truth PNGs (downscaled on the fly).
        dir: PathBuf,
        /// Score plain bicubic upscaling instead of a model.
        #[arg(long)]
        bicubic: bool,
        /// Score this trained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Upscaling factor (required with --bicubic; must match the
        /// checkpoint otherwise).
        #[arg(long)]
        scale: Option<usize>,
        /// Border pixels to ignore in the metrics (default: the scale).
        #[arg(long)]
        crop: Option<usize>,
    },
    /// Train a grid of module/block counts and report PSNR for each.
    Sweep {
        /// Base config; its modules/blocks entries are overridden per cell.
        #[arg(long)]
        config: PathBuf,
        /// Module counts to try, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        modules: Vec<usize>,
        /// Block counts to try, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        blocks: Vec<usize>,
    },
    /// Print a checkpoint's normalized gate weight norms per module.
    AnalyzeGf { checkpoint: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Train { config, seed } => commands::train(config, *seed),
        Cmd::Sr {
            checkpoint,
            input,
            output,
        } => commands::sr(checkpoint, input, output),
        Cmd::Eval {
            dir,
            bicubic,
            checkpoint,
            scale,
            crop,
        } => commands::eval(dir, *bicubic, checkpoint.as_deref(), *scale, *crop),
        Cmd::Sweep {
            config,
            modules,
            blocks,
        } => commands::sweep(config, modules, blocks),
        Cmd::AnalyzeGf { checkpoint } => commands::analyze_gf(checkpoint),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(commands::exit_code(&e));
    }
}
