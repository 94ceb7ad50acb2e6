//! The `pairnet` command line: generate synthetic corpora, extract
//! features, train pairwise-coupled models, evaluate and predict.
//!
//! Every command writes its outputs plus a `manifest.json` with checksums
//! into `--out`. Exit codes: 0 success, 2 bad input or configuration,
//! 1 internal failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod failure;
pub mod manifest;
pub mod tables;

pub use failure::{CmdResult, Failure, FailureKind};

#[derive(Debug, Parser)]
#[command(name = "pairnet", version, about = "Pairwise-coupled multi-class classification of two-channel recordings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus.
    Gen(GenArgs),
    /// Segment raw recordings into feature rows, or BBA-correct a feature table.
    Features(FeaturesArgs),
    /// Train the pairwise model on a labeled feature table.
    Train(TrainArgs),
    /// Score a model on a labeled feature table.
    Eval(EvalArgs),
    /// Predict a class for every row of a feature table.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// key = value generator spec.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FeaturesArgs {
    /// Raw sample CSV or feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Subtract each segment's background activity from its log powers.
    #[arg(long)]
    pub bba_correct: bool,
    /// Sampling rate of raw input, in Hz.
    #[arg(long, default_value_t = 100.0)]
    pub sample_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Labeled feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// key = value training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled feature CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature CSV, labels optional.
    #[arg(long)]
    pub input: PathBuf,
    /// Write `predictions.csv` here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> CmdResult<()> {
    match &cli.command {
        Command::Gen(a) => commands::gen(a).map(drop),
        Command::Features(a) => commands::features(a).map(drop),
        Command::Train(a) => commands::train(a).map(drop),
        Command::Eval(a) => commands::eval(a).map(drop),
        Command::Predict(a) => commands::predict(a).map(drop),
    }
}
