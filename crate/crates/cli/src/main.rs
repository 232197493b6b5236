mod mainstream_cmd;
mod prepare;
mod report;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Metric-driven learning to rank for recommenders.
#[derive(Debug, Parser)]
#[command(name = "lambdarec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize, filter and split an interaction file into partitions.
    Prepare(prepare::PrepareArgs),
    /// Train a model on prepared partitions.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint, optionally against a baseline, by user group.
    Report(report::ReportArgs),
    /// Compute per-user mainstreamness and cost weights.
    Mainstream(mainstream_cmd::MainstreamArgs),
}

/// 2 for usage and input problems, 3 when training or scoring went numerically wrong.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<lambdarec::Error>())
        .any(lambdarec::Error::is_numeric);
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(args) => prepare::run(args),
        Command::Train(args) => train::run(args),
        Command::Report(args) => report::run(args),
        Command::Mainstream(args) => mainstream_cmd::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
