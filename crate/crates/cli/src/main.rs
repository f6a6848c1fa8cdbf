mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "cash", version, about = "Online emitter identification with collision-alleviated signal hashing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for every artifact.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Ablation: train and score the vanilla hash without the identifier.
    #[arg(long)]
    no_identifier: bool,
    /// Few-shot mode: pretrain on seen emitters, finetune on novel shots.
    #[arg(long)]
    fsl: bool,
    /// Keep the encoder frozen during hasher training (`on`) or not.
    #[arg(long, value_enum)]
    freeze_encoder: Option<Toggle>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        RunConfig::load(self.config.as_deref())?.resolve(&Overrides {
            seed: self.seed,
            no_identifier: self.no_identifier,
            fsl: self.fsl,
            freeze_encoder: self.freeze_encoder.map(|t| matches!(t, Toggle::On)),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated dataset (manifest plus IQ files).
    Simulate(RunArgs),
    /// Train one model and save its snapshot and training log.
    Train(RunArgs),
    /// Identify a stream of signals in manifest order.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Dataset manifest holding the stream.
        #[arg(long)]
        input: PathBuf,
        /// Hash table to continue from.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated seeded trials with per-trial CSV rows and summaries.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Trials run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Trials over the axis values in the config's `sweep` section.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render SVG charts from trial CSVs or training logs.
    Plot {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(a.resolve()?, &a.out),
        Command::Train(a) => commands::train_cmd(a.resolve()?, &a.out),
        Command::Infer { model, input, table, out } => commands::infer(&model, &input, table.as_deref(), &out),
        Command::Evaluate { run, jobs } => commands::evaluate(run.resolve()?, &run.out, jobs),
        Command::Sweep { run, jobs } => commands::sweep(run.resolve()?, &run.out, jobs),
        Command::Plot { input, out } => commands::plot(&input, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
