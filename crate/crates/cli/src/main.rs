mod commands;
mod config;
mod error;
mod inspect;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{Ctx, EvalArgs, RunArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "eventdepth", version, about = "Event-guided adaptive depth sensing on synthetic desk scenes")]
struct Cli {
    /// Seed for generation, sampling and training; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for dataset generation [default: available cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        /// Number of sequences; overrides `dataset.count`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the keyframe detector.
    TrainKeyframe {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the depth extrapolator.
    TrainExtrap {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score baselines and trained extrapolators.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Extrapolator checkpoint as `NAME=PATH` or `PATH`; repeatable.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Fixed rates, comma separated; overrides `eval.fps`.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        fps: Option<Vec<f64>>,
        /// Score the adaptive protocol.
        #[arg(long)]
        adaptive: bool,
    },
    /// Run the adaptive pipeline over one sequence.
    Run {
        #[arg(long)]
        data: PathBuf,
        /// Sequence index within the dataset.
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        /// `rule`, `always`, `once` or a detector checkpoint.
        #[arg(long, default_value = "rule")]
        detector: String,
        /// `gt`, `repeat` or an extrapolator checkpoint.
        #[arg(long, default_value = "repeat")]
        extrapolator: String,
    },
    /// Print a summary of an EVT1, ELDR, NLNN or NLOS file.
    Inspect {
        path: PathBuf,
        /// Records to list.
        #[arg(long, default_value_t = 5)]
        limit: usize,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Inspect { path, limit } = &cli.command {
        print!("{}", inspect::inspect(path, *limit)?);
        return Ok(());
    }
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let ctx = Ctx {
        loaded: config::load(cli.config.as_deref(), cli.seed)?,
        out: cli.out,
        threads,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Gen { count } => commands::gen(&ctx, count),
        Command::TrainKeyframe { data } => commands::train_keyframe(&ctx, &data),
        Command::TrainExtrap { data } => commands::train_extrap(&ctx, &data),
        Command::Eval {
            data,
            models,
            fps,
            adaptive,
        } => commands::eval(
            &ctx,
            &EvalArgs {
                data,
                models,
                fps,
                adaptive,
            },
        ),
        Command::Run {
            data,
            sequence,
            detector,
            extrapolator,
        } => commands::run(
            &ctx,
            &RunArgs {
                data,
                sequence,
                detector,
                extrapolator,
            },
        ),
        Command::Inspect { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, matching the config-error code
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
