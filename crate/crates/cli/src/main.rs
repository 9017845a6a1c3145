//! Command-line front end: synthesize data, train, evaluate, score CoT
//! responses, dump the learning-rate schedule, and run gradient checks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Parser)]
#[command(
    name = "bridgest",
    version,
    about = "Toy-scale speech translation with a window-level Q-Former bridge"
)]
struct Cli {
    /// JSON config file layered over the command defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-key override such as `profile.short.epochs=4`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Parent of the per-run output directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Run directory name; defaults to the command plus a hash of the resolved config.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Worker threads for per-utterance work. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and print its statistics table.
    Synth,
    /// Train with the length curriculum and write checkpoints and the stage log.
    Train,
    /// BLEU of a checkpoint on dev and/or test manifests.
    Eval,
    /// Parse rate and BLEU gain of chain-of-thought responses.
    CotEval,
    /// Write the learning-rate schedule as CSV.
    LrDump,
    /// Finite-difference gradient checks for every layer and the tiny model.
    GradCheck,
}

pub struct Globals {
    pub out_dir: PathBuf,
    pub run_id: Option<String>,
    pub threads: usize,
}

/// 1 for bad input or configuration, 2 for failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    use bridgest::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => 1,
                CliError::Failed(_) => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::Argument(_) | E::Validation { .. } | E::Parse { .. } | E::Format(_) | E::Json(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = Globals {
        out_dir: cli.out_dir,
        run_id: cli.run_id,
        threads: cli.threads.max(1),
    };
    let result = config::user_layer(cli.config.as_deref(), &cli.set).and_then(|user| match cli.command {
        Command::Synth => commands::synth(&globals, user),
        Command::Train => commands::train(&globals, user),
        Command::Eval => commands::eval(&globals, user),
        Command::CotEval => commands::cot_eval(&globals, user),
        Command::LrDump => commands::lr_dump(&globals, user),
        Command::GradCheck => commands::grad_check(&globals, user),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
