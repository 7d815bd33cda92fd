//! The `vitstem` command line: argument definitions and command execution.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

pub use commands::execute;

#[derive(Debug, Parser)]
#[command(name = "vitstem", version, about = "Patchify vs. convolutional-stem ViTs: complexity, training and optimizability")]
pub struct Cli {
    /// Print one machine-readable JSON object instead of human output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Output root for the run store and reports [default: the experiment
    /// file's `output_dir`, else `vitstem-out`].
    #[arg(long, global = true, env = "VITSTEM_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Table,
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Centers {
    /// lr and wd from the experiment file.
    #[default]
    Config,
    /// Tuned optimum of the base model.
    PerModel,
    /// Shared range of the model family.
    Family,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flops, parameters and activations of models and stems.
    Analyze(AnalyzeArgs),
    /// Train one experiment file and store the run.
    Train(TrainArgs),
    /// Random (lr, wd) sweep around a center, with EDF and scatter exports.
    Sweep(SweepArgs),
    /// Gap-to-longest-schedule, optimizer-gap and EDF summary tables.
    Stability(StabilityArgs),
    /// Finite-difference gradient checks of every tensor op.
    Gradcheck(GradcheckArgs),
    /// SVG charts and CSVs of stored runs.
    Report,
}

#[derive(Debug, Default, Args)]
pub struct AnalyzeArgs {
    /// Canonical model name (repeatable).
    #[arg(long)]
    pub model: Vec<String>,
    /// Canonical stem name: P, C, S1..S4 (repeatable).
    #[arg(long)]
    pub stem: Vec<String>,
    /// Experiment or model config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Every canonical ViT plus every canonical stem.
    #[arg(long)]
    pub all_canonical: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Training seed shared by every trial.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t)]
    pub centers: Centers,
    #[arg(long)]
    pub center_lr: Option<f64>,
    #[arg(long)]
    pub center_wd: Option<f64>,
    #[arg(long, default_value_t = 0.125)]
    pub low: f64,
    #[arg(long, default_value_t = 4.0)]
    pub high: f64,
    /// Seed of the (lr, wd) sampler.
    #[arg(long, default_value_t = 0)]
    pub sweep_seed: u64,
    /// Concurrent trials; defaults to half the hardware threads.
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Schedule length treated as asymptotic; defaults to the longest per
    /// model and optimizer.
    #[arg(long)]
    pub asymptotic: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random shapes per op.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
}

/// What a command produced: human text plus structured data.
#[derive(Clone, Debug, Serialize)]
pub struct Output {
    pub command: &'static str,
    pub ok: bool,
    pub data: Value,
    #[serde(skip)]
    pub text: String,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Train(_) => "train",
            Command::Sweep(_) => "sweep",
            Command::Stability(_) => "stability",
            Command::Gradcheck(_) => "gradcheck",
            Command::Report => "report",
        }
    }
}
