//! Command-line harness for the MOMBO experiments.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! numerical failure (diverging training) aborts the run.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod svg;
pub mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Log;
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mombo", version, about = "Moment-matched pessimistic offline RL experiments")]
pub struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory, overriding the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the offline dataset for each seed.
    GenDataset,
    /// Train the dynamics ensemble for each seed.
    TrainDynamics,
    /// Train the policy for each seed and write learning curves.
    Train,
    /// Score penalty accuracy and tightness along evaluation episodes.
    EvalUq,
    /// Compare the moment-matched next value with repeated MC estimates.
    FigMmVsMc,
    /// Report the moment-matching and sampling suboptimality bounds.
    Bounds,
    /// Aggregate learning-curve CSVs into per-checkpoint mean and std.
    Aggregate {
        /// Curve files; defaults to every per-seed curve in the output directory.
        files: Vec<PathBuf>,
    },
}

pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(cli)?;
    cfg.dump()?;
    let log = Log { quiet: cli.quiet };
    match &cli.command {
        Command::GenDataset => commands::cmd_gen_dataset(&cfg, log),
        Command::TrainDynamics => commands::cmd_train_dynamics(&cfg, log),
        Command::Train => commands::cmd_train(&cfg, log),
        Command::EvalUq => commands::cmd_eval_uq(&cfg, log),
        Command::FigMmVsMc => commands::cmd_fig_mm_vs_mc(&cfg, log),
        Command::Bounds => commands::cmd_bounds(&cfg, log),
        Command::Aggregate { files } => commands::cmd_aggregate(&cfg, files, log),
    }
}

/// True when the error chain carries a numerical failure from the library.
pub fn is_numerical(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|c| c.downcast_ref::<mombo::Error>().is_some_and(mombo::Error::is_numerical))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_numerical(&e) {
                2
            } else {
                1
            }
        }
    }
}
