use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cpsplat::commands::{self, Method};
use cpsplat::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cpsplat",
    version,
    about = "Multi-identity Gaussian avatars with CP-factorized parameters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Als,
    Power,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    HeldOut,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default run configuration
    Config,
    /// Generate a synthetic dataset
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a factorized store on a dataset
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV; defaults to the checkpoint path with a .csv extension
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Report PSNR of a checkpoint on a dataset split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Render one identity in the first pose of a pose file
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset supplying the skeleton and viewport
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        identity: usize,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one identity in every pose of a pose file
    Animate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        identity: usize,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// CP-decompose a stored tensor
    Decompose {
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, value_enum, default_value = "als")]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print checkpoint dimensions and parameter counts
    Info {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> cpsplat::Result<RunConfig> {
    path.as_deref()
        .map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn run(cli: Cli) -> cpsplat::Result<String> {
    match cli.command {
        Command::Config => Ok(RunConfig::default().to_text()),
        Command::Gen { config, out } => commands::gen(&load_config(&config)?, &out),
        Command::Train {
            config,
            dataset,
            out,
            metrics,
        } => {
            let metrics = metrics.unwrap_or_else(|| out.with_extension("csv"));
            commands::train(&load_config(&config)?, &dataset, &out, &metrics)
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
        } => {
            let split = match split {
                SplitArg::Train => cpsplat_core::train::Split::Train,
                SplitArg::HeldOut => cpsplat_core::train::Split::HeldOut,
            };
            commands::eval(&checkpoint, &dataset, split)
        }
        Command::Render {
            checkpoint,
            dataset,
            identity,
            poses,
            out,
        } => commands::render(&checkpoint, &dataset, identity, &poses, &out),
        Command::Animate {
            checkpoint,
            dataset,
            identity,
            poses,
            out_dir,
        } => commands::animate(&checkpoint, &dataset, identity, &poses, &out_dir),
        Command::Decompose {
            tensor,
            rank,
            method,
            seed,
            out,
        } => {
            let method = match method {
                MethodArg::Als => Method::Als,
                MethodArg::Power => Method::Power,
            };
            commands::decompose(&tensor, rank, method, seed, out.as_deref())
        }
        Command::Info { checkpoint } => commands::info(&checkpoint),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
