//! `gem`: ingest, train, calibrate, index, track, evaluate and sweep.

mod commands;
mod failure;
mod providers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gem_dst::config::{Overrides, RunConfig};

use failure::Failure;

#[derive(Parser)]
#[command(
    name = "gem",
    version,
    about = "Dialogue state tracking with routed experts"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Hash embeddings, stub sequence expert, scripted LLM and fixed latencies.
    #[arg(long, global = true)]
    stub_providers: bool,
    /// Reject unknown labels and fail the run on any failed turn.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a MultiWOZ directory into per-split corpus files.
    Ingest,
    /// Train the graph expert and write a checkpoint.
    TrainGat,
    /// Score both experts on the calibration split and write the accuracy table.
    CalibrateRouter,
    /// Embed the training split into the example index.
    BuildIndex,
    /// Track a dialogue file and print one record per user turn.
    Track {
        /// Corpus file, or a single dialogue object.
        input: PathBuf,
    },
    /// Run the full pipeline on the evaluation split and write a run report.
    Evaluate,
    /// Train and score one graph expert per ablation cell.
    Sweep,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::TrainGat => "train-gat",
            Command::CalibrateRouter => "calibrate-router",
            Command::BuildIndex => "build-index",
            Command::Track { .. } => "track",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        stub_providers: cli.stub_providers,
        strict: cli.strict,
    };
    let mut config = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    commands::write_snapshot(&config)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&config),
        Command::TrainGat => commands::train_gat(&config),
        Command::CalibrateRouter => commands::calibrate_router(&config),
        Command::BuildIndex => commands::build_index(&config),
        Command::Track { input } => commands::track(&config, input),
        Command::Evaluate => commands::evaluate(&config),
        Command::Sweep => commands::sweep(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json(cli.command.name()));
            ExitCode::from(f.exit_code())
        }
    }
}
