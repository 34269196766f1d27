//! `bqi`: configure, train and report collective-spin sensor experiments.

mod bundle;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use crate::bundle::Bundle;
use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Invalid or unreadable configuration; exit code 2.
    Config(String),
    /// Failure while running an experiment; exit code 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "invalid config: {m}"),
            Self::Runtime(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "bqi", version, about = "Train and evaluate collective-spin sensors for Bayesian estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the optimizer and the sampled datasets.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap; falls back to BQI_THREADS.
    #[arg(long)]
    threads: Option<usize>,
    /// Objective evaluation budget per training run.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the sensor and report its Bayesian risk.
    Train(Common),
    /// Direct training against f* versus estimating u and mapping it through f*.
    Compare(Common),
    /// Train across qubit counts and fit the effective-variance scaling.
    Scaling(Common),
    /// Eigentask spectrum and the risk of a truncated readout.
    Eigentasks {
        #[command(flatten)]
        common: Common,
        /// Eigentasks kept, the constant one included.
        #[arg(long)]
        retained: Option<usize>,
    },
    /// Fisher and Bhattacharyya terms of the small-width loss expansion.
    Info(Common),
    /// Dump raw shot counts at inputs drawn from the prior.
    Sample(Common),
}

fn resolve(common: &Common) -> Result<(ExperimentConfig, usize), CliError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.dataset.seed = seed;
        cfg.optimizer.direct.seed = seed;
    }
    if let Some(budget) = common.budget {
        cfg.optimizer.direct.budget = budget;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let threads = match common.threads {
        Some(t) => t,
        None => match std::env::var("BQI_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("BQI_THREADS: expected a thread count, got {v:?}")))?,
            Err(_) => 0,
        },
    };
    Ok((cfg, threads))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common, retained) = match &cli.command {
        Command::Train(c) => ("train", c, None),
        Command::Compare(c) => ("compare", c, None),
        Command::Scaling(c) => ("scaling", c, None),
        Command::Eigentasks { common, retained } => ("eigentasks", common, *retained),
        Command::Info(c) => ("info", c, None),
        Command::Sample(c) => ("sample", c, None),
    };
    let (mut cfg, threads) = resolve(common)?;
    if let Some(k) = retained {
        cfg.eigentasks.retained = k;
        cfg.validate()?;
    }
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let mut bundle = Bundle::create(&cfg.output_dir)?;
    match name {
        "train" => commands::cmd_train(&cfg, &mut bundle)?,
        "compare" => commands::cmd_compare(&cfg, &mut bundle)?,
        "scaling" => commands::cmd_scaling(&cfg, &mut bundle)?,
        "eigentasks" => commands::cmd_eigentasks(&cfg, &mut bundle)?,
        "info" => commands::cmd_info(&cfg, &mut bundle)?,
        _ => commands::cmd_sample(&cfg, &mut bundle)?,
    }
    let dir = bundle.dir().display().to_string();
    bundle.finish(name, &cfg, rayon::current_num_threads())?;
    println!("wrote {dir}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
