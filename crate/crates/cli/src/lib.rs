//! Command-line experiments: synthetic data generation, augmentation
//! previews, pre-training, fine-tuning, linear evaluation, overlap analysis
//! and consolidated reports.
//!
//! Every command takes a JSON config, an output directory and a seed, and
//! finishes by writing `manifest.json` listing the seed, the SHA-256 of the
//! config file and every file it produced.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};
pub use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(
    name = "ecg-ssl",
    version,
    about = "Self-supervised ECG representation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Optional JSON config listing run directories.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding the runs; the report is written here.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and its subject-disjoint window split.
    SynthGen(RunArgs),
    /// Write original and augmented samples of a few windows as CSV.
    AugmentPreview(RunArgs),
    /// Self-supervised pre-training of the encoder.
    Pretrain(RunArgs),
    /// Supervised fine-tuning of encoder and classification head.
    Finetune(RunArgs),
    /// Linear evaluation: frozen encoder, trained head.
    Lineval(RunArgs),
    /// Overlap of two window sets in a shared embedding plane.
    Distshift(RunArgs),
    /// Consolidate fine-tuning and linear-evaluation runs into tables.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen(_) => "synth-gen",
            Command::AugmentPreview(_) => "augment-preview",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Lineval(_) => "lineval",
            Command::Distshift(_) => "distshift",
            Command::Report(_) => "report",
        }
    }
}

/// Runs one command and returns the manifest it wrote.
pub fn run(command: &Command) -> CliResult<Manifest> {
    commands::dispatch(command)
}
