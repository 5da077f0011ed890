use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod io;
mod model_file;

use io::InputError;

/// Unsupervised ensemble learning for binary classifiers with dependent
/// errors.
#[derive(Debug, Parser)]
#[command(name = "latent-ensemble", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a random latent model and a dataset from it.
    Simulate(commands::SimulateArgs),
    /// Estimate the group structure and fit a model to unlabeled predictions.
    Fit(commands::FitArgs),
    /// Label instances with a fitted model.
    Predict(commands::PredictArgs),
    /// Write the classifier dependence score matrix.
    Score(commands::ScoreArgs),
    /// Balanced error of predictions, and parameter errors of a model.
    Evaluate(commands::EvaluateArgs),
    /// Pick the most accurate classifiers from distinct groups.
    Select(commands::SelectArgs),
    /// Run the synthetic group-size sweep.
    Benchmark(commands::BenchmarkArgs),
}

/// 2 for problems with the user's input, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let user = err.chain().any(|c| {
        c.is::<InputError>()
            || c.is::<latent_ensemble::Error>()
            || c.is::<std::io::Error>()
            || c.is::<csv::Error>()
            || c.is::<serde_json::Error>()
            || c.is::<toml::de::Error>()
    });
    if user {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Score(a) => commands::score(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Select(a) => commands::select(a),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
