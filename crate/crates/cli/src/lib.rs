//! Command-line front end for the training, tuning and evaluation pipeline.
//!
//! Exit codes: 0 on success, 1 for usage and invalid settings, 2 for data
//! or file-format errors, 3 for numerical failures.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use cnf_core::train::with_threads;
use cnf_core::{Error, Result};

use crate::commands::Out;

#[derive(Debug, Parser)]
#[command(name = "cnf", version, about = "Train, tune and evaluate small convolutional classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the four-class synthetic PGM dataset with a manifest.
    SynthData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Image side in pixels.
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split, augment and write the datasets plus normalization statistics.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes model.ckpt and history.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `[train] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tune hyperparameters; writes trials.csv and best.ini.
    Tune {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `[tune] seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a manifest; writes confusion.csv and report.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a model's layers, output shapes and parameter counts.
    Inspect {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Shape(_) | Error::Data(_) | Error::Pgm { .. } | Error::Checkpoint(_) | Error::Parse(_) | Error::Io { .. } => 2,
        Error::Numerical(_) | Error::NonFiniteLoss { .. } | Error::Tuning(_) | Error::Contract(_) => 3,
    }
}

fn dispatch(command: Command, threads: usize, out: Out<'_>) -> Result<()> {
    use commands::*;
    match command {
        Command::SynthData { out: dir, n, side, seed } => synth_data(&dir, n, side, seed, out),
        Command::Prepare { config, out: dir } => prepare(&load_config(&config, dir.as_deref(), None, "data.seed")?, out),
        Command::Train { config, out: dir, seed } => {
            train_cmd(&load_config(&config, dir.as_deref(), seed, "train.seed")?, threads, out)
        }
        Command::Tune { config, out: dir, seed } => {
            tune_cmd(&load_config(&config, dir.as_deref(), seed, "tune.seed")?, threads, out)
        }
        Command::Eval { checkpoint, manifest, out: dir } => eval_cmd(&checkpoint, &manifest, dir.as_deref(), out),
        Command::Inspect { checkpoint, config } => match (checkpoint, config) {
            (Some(c), _) => inspect_checkpoint(&c, out),
            (None, Some(f)) => inspect_config(&load_config(&f, None, None, "data.seed")?, out),
            (None, None) => unreachable!("clap requires one of the two"),
        },
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Errors go to stderr.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = pipeline::env_threads()
        .and_then(|threads| with_threads(threads, move || dispatch(cli.command, threads, out)).and_then(|r| r));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
