//! Command-line front end: TOML configuration, subcommands and CSV output.
//!
//! Exit codes: `0` success, `1` a check failed or training diverged,
//! `2` the configuration or command line is invalid.

pub mod commands;
pub mod config;
pub mod report;
pub mod verify;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::commands::CommandOutput;
use crate::config::RunConfig;
use crate::verify::VerifyOptions;

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Library(#[from] expressivity::Error),

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::Library(expressivity::Error::TrainingDiverged { .. }) => EXIT_FAILURE,
            CliError::Library(_) => EXIT_USAGE,
            CliError::Io { .. } | CliError::Output(_) => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "expressivity",
    version,
    about = "Perturbation bounds for attention models and pooling operators"
)]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory for CSV files; the main CSV goes to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Monte Carlo trial count, overriding the config.
    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Scales every C1 in the verify soundness check (negative control).
    #[arg(long, global = true, hide = true)]
    pub inject_c1_scale: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Closed-form bound rows for every pooling, eps and sigma.
    Bound,
    /// Monte Carlo perturbation sweep paired with the bounds.
    Sweep,
    /// Finite-difference check of the attention Jacobian.
    JacobianCheck,
    /// Train learnable pooling on a synthetic task.
    TrainPool,
    /// Run every acceptance criterion.
    Verify,
}

/// Resolves the effective configuration: file (or defaults) plus overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.experiment.trials = trials;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli, cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    match cli.command {
        Command::Bound => commands::cmd_bound(cfg),
        Command::Sweep => commands::cmd_sweep(cfg),
        Command::JacobianCheck => commands::cmd_jacobian_check(cfg),
        Command::TrainPool => commands::cmd_train_pool(cfg),
        Command::Verify => {
            let mut opts = VerifyOptions::default();
            if let Some(t) = cli.trials {
                opts.soundness_trials = t;
            }
            if let Some(scale) = cli.inject_c1_scale {
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(CliError::Config {
                        key: "inject-c1-scale".into(),
                        message: "must be positive".into(),
                    });
                }
                opts.c1_scale = scale;
            }
            commands::cmd_verify(cfg, &opts)
        }
    }
}

fn write_output(cli: &Cli, cfg: &RunConfig, output: &CommandOutput) -> Result<(), CliError> {
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
                path: dir.clone(),
                source: e,
            })?;
            for (name, contents) in &output.files {
                let path = dir.join(name);
                std::fs::write(&path, contents).map_err(|e| CliError::Io { path, source: e })?;
            }
        }
        None if cli.command != Command::Verify => {
            if let Some((_, contents)) = output.files.first() {
                std::io::stdout()
                    .write_all(contents.as_bytes())
                    .map_err(|e| CliError::Output(e.to_string()))?;
            }
        }
        None => {}
    }
    Ok(())
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = resolve_config(cli).and_then(|cfg| {
        let output = execute(cli, &cfg)?;
        write_output(cli, &cfg, &output)?;
        Ok(output)
    });
    match result {
        Ok(output) => {
            if cli.command == Command::Verify {
                print!("{}", output.summary);
            } else if !output.summary.is_empty() {
                eprintln!("{}", output.summary);
            }
            if output.passed {
                EXIT_SUCCESS
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
