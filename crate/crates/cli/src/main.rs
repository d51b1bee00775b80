use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod manifest;
mod plot;

use config::{TrainFlags, WindowFlags};

#[derive(Parser, Debug)]
#[command(
    name = "pvlstm",
    version,
    about = "Pedestrian 3D bounding-box forecasting with a position-velocity LSTM"
)]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with [model], [train] and [data] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Only warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic pedestrian tracks from a TOML spec.
    Gen { spec: PathBuf },
    /// Train a model on a track file.
    Train {
        data: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Score a checkpoint and the Zero-Vel baseline on a track file.
    Eval {
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Row name in reports; defaults to the checkpoint file stem.
        #[arg(long)]
        label: Option<String>,
        /// Samples kept for overlay plots.
        #[arg(long, default_value_t = 8)]
        preview: usize,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Predict future boxes for every observation window in a track file.
    Predict {
        tracks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        window: WindowFlags,
    },
    /// Combine eval outputs into a summary table and plots.
    Report {
        /// eval.json files or the directories holding them
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let ctx = commands::Context {
        seed: cli.seed,
        config: cli.config,
        out: cli.out,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Gen { spec } => commands::gen(&ctx, &spec),
        Command::Train { data, flags } => commands::train(&ctx, &data, &flags),
        Command::Eval {
            data,
            checkpoint,
            label,
            preview,
            window,
        } => commands::eval(&ctx, &data, &checkpoint, label, preview, &window),
        Command::Predict {
            tracks,
            checkpoint,
            window,
        } => commands::predict(&ctx, &tracks, &checkpoint, &window),
        Command::Report { inputs } => commands::report(&ctx, &inputs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
