//! `emofuse`: feature extraction, synthetic data, training, evaluation,
//! cross-validation and gradient checks from the command line.
//!
//! Exit status: 0 success, 1 invalid input or configuration, 2 runtime
//! failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "emofuse", version, about = "Multimodal speech emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute low-level features for every audio record of a manifest.
    Extract(commands::ExtractArgs),
    /// Generate the synthetic four-class dataset.
    Synth(commands::SynthArgs),
    /// Train one model on a manifest and save a checkpoint.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(commands::EvalArgs),
    /// K-fold cross-validation over one or more fusion modes.
    Cv(commands::CvArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(commands::GradcheckArgs),
}

/// An error with its exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<emofuse_core::Error> for CliError {
    fn from(e: emofuse_core::Error) -> Self {
        CliError {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMOFUSE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Cv(a) => commands::cv(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
