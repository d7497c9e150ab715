//! `phasecond`: train, evaluate and inspect PhaseCond readers.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod attention;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{DumpAttentionArgs, EvaluateArgs, GradCheckArgs, PredictArgs, SynthDataArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(
    name = "phasecond",
    version,
    about = "Multi-phase attention reader for extractive QA"
)]
struct Cli {
    /// Log filter, e.g. `info` or `phasecond=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics and the effective config.
    Train(Box<TrainArgs>),
    /// Score a checkpoint on a dataset (EM/F1) and write predictions.
    Evaluate(EvaluateArgs),
    /// Predict answers for a dataset or a single passage/question pair.
    Predict(PredictArgs),
    /// Export every attention matrix of one example.
    DumpAttention(DumpAttentionArgs),
    /// Finite-difference gradient check of every layer type.
    GradCheck(GradCheckArgs),
    /// Generate a synthetic cloze dataset as JSON lines.
    SynthData(SynthDataArgs),
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<phasecond::Error> for Failure {
    fn from(e: phasecond::Error) -> Self {
        use phasecond::Error as E;
        match e {
            E::Config(_) | E::Path(_) | E::Build { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut logger = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(filter) = &cli.log {
        logger.parse_filters(filter);
    }
    logger.format_timestamp(None).init();

    let result = match cli.command {
        Command::Train(a) => commands::train(*a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::DumpAttention(a) => commands::dump_attention(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::SynthData(a) => commands::synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
