mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use esrl_core::Error;

#[derive(Debug, Parser)]
#[command(name = "esrl", version, about = "Offline Bayesian RL experiments on tabular MDPs")]
pub struct Cli {
    /// key=value config file, or a run manifest (.json) to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalTarget {
    TrueEnvRollout,
    Oppe,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the expert and write one RiverSwim dataset per behavior epsilon.
    Generate,
    /// Fit the posterior and write one gated policy per alpha.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a policy file in the true environment or off-policy from data.
    Evaluate {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EvalTarget::TrueEnvRollout)]
        mode: EvalTarget,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Export posterior Q samples per action at selected (s, t) cells.
    Posteriors {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cells as `s:t` with 1-based t; repeatable. Defaults to `posteriors.cells`.
        #[arg(long = "cell")]
        cells: Vec<String>,
        /// Risk level for the continuation policy; defaults to the first `train.alpha`.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Posterior probability that policy A has a higher value than policy B.
    Compare {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        policy_a: Option<PathBuf>,
        #[arg(long)]
        policy_b: Option<PathBuf>,
    },
    /// Regret of the learned policy against the oracle gate over `regret.grid`.
    Regret,
    /// Check candidate models against the confidence set of a dataset.
    Confset {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::Contract(_) => 4,
        Error::Data(_) | Error::Dimension(_) | Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
