//! Experiment runner: ingest raw data into containers, train and evaluate
//! single models, and drive method-comparison / ablation grids from a
//! config file.

mod bundle;
mod config;
mod data_build;
mod ingest;
mod run;
mod table;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "qdm",
    version,
    about = "Quadruplet metric learning for imbalanced time-series fault diagnosis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw data (process CSV runs, signal files, synthetic specs)
    /// into a windowed dataset container.
    #[command(subcommand)]
    Ingest(ingest::IngestCmd),
    /// Train one model on a container; store weights, checkpoint, step log.
    Train(run::TrainArgs),
    /// Evaluate stored weights on a container.
    Evaluate(run::EvaluateArgs),
    /// Train every configured method over repeated imbalanced splits and
    /// emit a comparison table.
    Scenario(run::ScenarioArgs),
    /// Sweep loss presets and beta values over the same splits.
    Ablate(run::AblateArgs),
    /// Re-render tables from a stored result bundle.
    Report(run::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_workers().and_then(|()| match cli.command {
        Command::Ingest(cmd) => ingest::run(cmd),
        Command::Train(args) => run::train(args),
        Command::Evaluate(args) => run::evaluate(args),
        Command::Scenario(args) => run::scenario(args),
        Command::Ablate(args) => run::ablate(args),
        Command::Report(args) => run::report(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_json(&err));
            ExitCode::FAILURE
        }
    }
}

/// Cap the rayon pool at QDM_WORKERS threads when the variable is set.
fn configure_workers() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("QDM_WORKERS") else {
        return Ok(());
    };
    let workers: usize = raw.parse().map_err(|_| {
        qdm_core::Error::Config(format!(
            "QDM_WORKERS must be a positive integer, got {raw:?}"
        ))
    })?;
    if workers == 0 {
        return Err(qdm_core::Error::Config("QDM_WORKERS must be at least 1".into()).into());
    }
    // Failure here means a pool already exists, which is fine in-process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global();
    Ok(())
}

/// One machine-readable line on stderr for scripted callers.
fn error_json(err: &anyhow::Error) -> String {
    use qdm_core::Error;
    let kind = match err.downcast_ref::<Error>() {
        Some(Error::ShapeMismatch { .. }) => "shape_mismatch",
        Some(Error::Contract(_)) => "contract",
        Some(Error::TapeConsumed) => "tape_consumed",
        Some(Error::Sampling { .. }) => "sampling",
        Some(Error::NanLoss { .. }) => "nan_loss",
        Some(Error::Parse { .. }) => "parse",
        Some(Error::Config(_)) => "config",
        Some(Error::Format { .. }) => "format",
        Some(Error::Io { .. }) => "io",
        None => "other",
    };
    serde_json::json!({ "error": format!("{err}"), "kind": kind }).to_string()
}
