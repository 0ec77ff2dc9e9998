mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, DataArgs, EvalArgs, ModelArgs, PredictArgs, SplitArgs, SyntheticArgs, TrainArgs};

/// Next-basket recommendation with a time-aware encoder-decoder transformer.
#[derive(Debug, Parser)]
#[command(name = "trex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (data.jsonl, vocab.json).
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        synthetic: SyntheticArgs,
    },
    /// Train a model and write model.ckpt and run_log.jsonl.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score held-out final baskets and write report files.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Print a ranked basket for one customer history.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        predict: PredictArgs,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs: exit code 2.
    Usage(String),
    /// Failure while running: exit code 1.
    Runtime(String),
}

impl From<trex::Error> for CliError {
    fn from(e: trex::Error) -> Self {
        use trex::Error::*;
        match e {
            InvalidConfig(_)
            | UnknownCategory(_)
            | UnknownStrategy(_)
            | InvalidToken { .. }
            | Parse { .. }
            | Json(_)
            | EmptyHistory
            | InsufficientHistory { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, synthetic } => {
            let mut cfg = common.resolve()?;
            synthetic.apply(&mut cfg);
            commands::gen_data(&cfg)
        }
        Command::Train {
            common,
            data,
            split,
            model,
            train,
        } => {
            let mut cfg = common.resolve()?;
            data.apply(&mut cfg);
            split.apply(&mut cfg);
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            commands::train(&cfg)
        }
        Command::Evaluate {
            common,
            data,
            split,
            eval,
        } => {
            let mut cfg = common.resolve()?;
            data.apply(&mut cfg);
            split.apply(&mut cfg);
            eval.apply(&mut cfg);
            commands::evaluate(&cfg)
        }
        Command::Predict { common, predict } => {
            let mut cfg = common.resolve()?;
            predict.apply(&mut cfg);
            commands::predict(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
