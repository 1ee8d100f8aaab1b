//! Command-line driver: dataset generation, pretraining, self-training,
//! evaluation, consistency analysis and the ablation grid.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "stereo-selftrain",
    about = "Consistency-filtered self-training for iterative stereo matching",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config file's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset plus manifest.
    GenData(CommonArgs),
    /// Supervised pretraining on the labeled manifest.
    Pretrain(CommonArgs),
    /// Self-training on the unlabeled manifest from an initial checkpoint.
    Selftrain {
        #[command(flatten)]
        common: CommonArgs,
        /// Pretrained weights to initialize teacher and student.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled manifest.
    Eval {
        /// Model checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest whose labeled entries form the eval set.
        #[arg(long)]
        manifest: PathBuf,
        /// Where to write the report (defaults to the manifest's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Debug: score the ground truth against itself instead of running
        /// the model (pipeline check; EPE must be 0).
        #[arg(long)]
        use_gt: bool,
    },
    /// Emit consistency/error heatmaps and rank correlations per sample.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run the teacher for this many refinement iterations (defaults
        /// to the checkpoint's configured count).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Run the configured ablation grid (variants x seeds) end to end.
    Ablate(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args.config, args.seed, args.out),
        Command::Pretrain(args) => commands::pretrain::run(args.config, args.seed, args.out),
        Command::Selftrain { common, checkpoint } => {
            commands::selftrain::run(common.config, common.seed, common.out, checkpoint)
        }
        Command::Eval {
            checkpoint,
            manifest,
            out,
            use_gt,
        } => commands::eval::run(checkpoint, manifest, out, use_gt),
        Command::Analyze {
            checkpoint,
            manifest,
            out,
            iters,
        } => commands::analyze::run(checkpoint, manifest, out, iters),
        Command::Ablate(args) => commands::ablate::run(args.config, args.seed, args.out),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // Configuration problems exit 2, runtime failures 3.
            if commands::is_config_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
