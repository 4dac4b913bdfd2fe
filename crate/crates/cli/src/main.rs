//! `expclust`: the command-line surface of the library.
//!
//! Every subcommand accepts `--config file.json`, whose keys are the
//! snake_case flag names; flags given on the command line win. A manifest
//! written by an earlier run is accepted as a config too. Every run leaves a
//! manifest beside its outputs.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::*;

#[derive(Parser)]
#[command(
    name = "expclust",
    version,
    about = "Recover a network's parameters from its input-output map"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic teacher networks.
    #[command(subcommand)]
    Teacher(TeacherCommand),
    /// Datasets labelled by a teacher.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train an ensemble of students.
    Train(TrainArgs),
    /// Pick a student width by short training runs.
    Probe(ProbeArgs),
    /// Label the hidden neurons of a network by type.
    Classify(ClassifyArgs),
    /// Cluster one layer of a trained ensemble.
    Cluster(ClusterArgs),
    /// Run the full reconstruction.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstruction with its teacher.
    Eval(EvalArgs),
    /// Convergence grid and robustness sweep.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand)]
enum TeacherCommand {
    Gen(TeacherGenArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    Gen(DataGenArgs),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Grid(GridArgs),
    Sweep(SweepArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        return report(e);
    }
    let outcome = match cli.command {
        Command::Teacher(TeacherCommand::Gen(a)) => teacher_gen(a),
        Command::Data(DataCommand::Gen(a)) => data_gen(a),
        Command::Train(a) => train(a),
        Command::Probe(a) => probe(a),
        Command::Classify(a) => classify(a),
        Command::Cluster(a) => cluster(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(ExperimentCommand::Grid(a)) => grid(a),
        Command::Experiment(ExperimentCommand::Sweep(a)) => sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code())
}

/// `EXPCLUST_THREADS` caps the worker pool used for ensembles and grids.
fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("EXPCLUST_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| CliError::Usage(format!("EXPCLUST_THREADS must be a positive integer, got `{value}`")))?;
    if n == 0 {
        return Err(CliError::Usage("EXPCLUST_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}
