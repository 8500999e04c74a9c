//! `gridflow`: generate synthetic scenarios, compute road masks, train and
//! evaluate the dense U-Net, run the ablation and write visual reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gridflow", version, about = "Traffic movie forecasting on synthetic cities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed for the city, initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenario directory written by `generate`.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Model checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Road mask file written by `mask`.
    #[arg(long, value_name = "FILE")]
    pub masks: Option<PathBuf>,
    /// Parent directory of per-run output directories.
    #[arg(long, value_name = "DIR")]
    pub reports: Option<PathBuf>,
}

/// Optimization flags.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Pretraining epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fine-tuning epochs.
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Samples per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Keep every n-th window of the training days.
    #[arg(long)]
    pub sample_stride: Option<usize>,
}

/// Chooses whether predictions are multiplied by the road masks.
#[derive(Debug, Clone, Args)]
pub struct MaskFlags {
    /// Apply the road masks (overrides `train.use_mask`).
    #[arg(long, conflicts_with = "no_mask")]
    pub mask: bool,
    /// Do not apply the road masks.
    #[arg(long)]
    pub no_mask: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a multi-day scenario into the data directory.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Compute road masks from the training days.
    Mask {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain a model, then fine-tune it when two-stage training is on.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Fine-tune on the validation days after pretraining.
        #[arg(long, conflicts_with = "single_stage")]
        two_stage: bool,
        /// Pretrain only.
        #[arg(long)]
        single_stage: bool,
    },
    /// Fine-tune an existing checkpoint on the validation days.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Where to write the tuned checkpoint; defaults to overwriting the input.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Predict one test window and save it as a checkpoint-format file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        masking: MaskFlags,
        /// Index into the test windows.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// Score a checkpoint on the test days.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        masking: MaskFlags,
    },
    /// Train once and score the four mask / two-stage combinations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write ground-truth, prediction and difference images for a test window.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        masking: MaskFlags,
        /// Index into the test windows.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Generate { common } => commands::generate(&common),
        Command::Mask { common } => commands::mask(&common),
        Command::Train { common, train, two_stage, single_stage } => {
            let stage = if two_stage { Some(true) } else if single_stage { Some(false) } else { None };
            commands::train(&common, &train, stage)
        }
        Command::Finetune { common, train, output } => commands::finetune(&common, &train, output),
        Command::Predict { common, masking, sample } => commands::predict(&common, &masking, sample),
        Command::Evaluate { common, masking } => commands::evaluate(&common, &masking),
        Command::Ablate { common, train } => commands::ablate(&common, &train),
        Command::Report { common, masking, sample } => commands::report(&common, &masking, sample),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
