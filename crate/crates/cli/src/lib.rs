//! Command-line front end: fit mixtures to weight grids, compute context
//! vectors, render and compare densities, and run the synthetic demo.

pub mod commands;
pub mod config;
pub mod demo;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::commands::{cmd_compare, cmd_fit, cmd_forward, cmd_render, ranking_tsv, RenderFormat};
use crate::config::{ConfigArgs, RunConfig};
use crate::demo::{run_demo, DemoOptions};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: mmattn::Error },

    #[error(transparent)]
    Core(#[from] mmattn::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn file(path: &Path, source: mmattn::Error) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 3 for numerical failures, 2 for everything caused by the input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::File { source, .. } | CliError::Core(source) if source.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mmattn",
    version,
    about = "Multimodal continuous attention with Gaussian mixtures"
)]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Output file (directory for `demo`); stdout when omitted
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Json,
    Tsv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a Gaussian mixture to a weight grid, choosing K by penalized likelihood
    Fit {
        /// Weights as CSV rows `u,v,w` or JSON {"height","width","weights"}
        weights: PathBuf,
        /// Fit exactly this many components instead of selecting
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compute the context vector of a mixture over a feature grid
    Forward {
        /// Features as CSV rows `u,v,f1,...,fD` or a JSON descriptor
        features: PathBuf,
        /// Mixture JSON or a fit bundle
        mixture: PathBuf,
        /// Also emit gradients (upstream defaults to all ones)
        #[arg(long)]
        grad: bool,
        /// Comma-separated upstream gradient, one value per feature
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        upstream: Option<Vec<f64>>,
    },
    /// Discretize a mixture and write it as PGM or CSV
    Render {
        mixture: PathBuf,
        /// Defaults to CSV for `.csv` outputs, PGM otherwise
        #[arg(long, value_enum)]
        format: Option<RenderFormat>,
    },
    /// Rank candidate densities by JS divergence from a reference
    Compare {
        /// Density CSV, mixture JSON or fit bundle
        reference: PathBuf,
        candidates: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: TableFormat,
    },
    /// Generate synthetic grids and run the whole pipeline on them
    Demo {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Additionally fit each trial with K drawn uniformly from 1..=k_max
        #[arg(long)]
        train_time_k: bool,
    },
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| CliError::file(path, e.into())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Core(e.into()))
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    Ok(mmattn::io::to_json_string(value)?.into_bytes())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(&cli.config)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Fit { weights, k } => emit(out, &json(&cmd_fit(&weights, &cfg, k)?)?),
        Command::Forward {
            features,
            mixture,
            grad,
            upstream,
        } => emit(out, &json(&cmd_forward(&features, &mixture, &cfg, grad, upstream)?)?),
        Command::Render { mixture, format } => {
            let path = out.ok_or_else(|| CliError::Usage("render needs --out <FILE>".into()))?;
            let format = format.unwrap_or_else(|| RenderFormat::from_path(path));
            emit(Some(path), &cmd_render(&mixture, &cfg, format)?)
        }
        Command::Compare {
            reference,
            candidates,
            format,
        } => {
            let ranked = cmd_compare(&reference, &candidates, &cfg)?;
            let bytes = match format {
                TableFormat::Json => json(&ranked)?,
                TableFormat::Tsv => ranking_tsv(&ranked).into_bytes(),
            };
            emit(out, &bytes)
        }
        Command::Demo { trials, train_time_k } => {
            let opts = DemoOptions {
                out: out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("demo_out")),
                trials,
                train_time_k,
            };
            let summary = run_demo(&opts, &cfg)?;
            emit(None, demo::recovery_tsv(&summary.recovery).as_bytes())
        }
    }
}

/// Parses arguments, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
