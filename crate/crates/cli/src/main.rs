//! `radial-threat`: simulate, denoise, featurize, train, evaluate, ablate
//! and monitor DAS records.
//!
//! Errors print one line to stderr,
//! `error kind=<kind> code=<n> message="<text>"`, and exit with `code`:
//! 2 usage, 3 config, 4 missing input, 5 format or compatibility, 6 runtime.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use radial_threat::dastrace::TraceError;
use radial_threat::featurize::FeatureError;
use radial_threat::network::NetError;
use radial_threat::simulate::SimError;
use radial_threat::train::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::MissingInput(_) => 4,
            CliError::Format(_) => 5,
            CliError::Runtime(_) => 6,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput(_) => "missing_input",
            CliError::Format(_) => "format",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ").replace('"', "'");
        format!("error kind={} code={} message=\"{msg}\"", self.kind(), self.code())
    }
}

fn io_error(path: &std::path::Path, e: &std::io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::MissingInput(msg)
    } else {
        CliError::Runtime(msg)
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        match &e {
            TraceError::Io { path, source } => io_error(path, source),
            TraceError::ClassTooSmall { .. } | TraceError::Empty => CliError::Runtime(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match &e {
            FeatureError::Io { path, source } => io_error(path, source),
            FeatureError::Format { .. } | FeatureError::TooShort { .. } | FeatureError::Stitch(_) => {
                CliError::Format(e.to_string())
            }
            FeatureError::UnknownVariant(_) | FeatureError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match &e {
            NetError::Io { path, source } => io_error(path, source),
            NetError::Checkpoint(_) | NetError::Resolution { .. } => CliError::Format(e.to_string()),
            NetError::InvalidSpec(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Net(e) => e.into(),
            TrainError::Feature(e) => e.into(),
            TrainError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "radial-threat", version, about = "Radial threat estimation for DAS-monitored pipelines")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` configuration file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; overrides the config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Independent repeats (ablation), seeds seed, seed+1, ...
    #[arg(long, global = true, default_value_t = 1)]
    pub repeats: usize,
    /// Extra `key=value` overrides, applied after the config file
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset
    Simulate {
        #[arg(long)]
        n_per_class: Option<usize>,
        #[arg(long)]
        noise_floor: Option<f64>,
    },
    /// VMD-denoise every zone trace of a trace file
    Denoise {
        #[arg(long)]
        input: PathBuf,
    },
    /// Render feature maps for a trace file
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        /// Append augmented copies (augmenting variants only)
        #[arg(long)]
        training: bool,
    },
    /// Train on the training split of a dataset manifest
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split of a dataset manifest
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Evaluate every record instead of the test split
        #[arg(long)]
        all: bool,
    },
    /// Train and evaluate one model per feature variant
    Ablation {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "raw,tf,tff,stff,stff_aug")]
        variants: String,
    },
    /// Classify every record of a trace file and emit threat decisions
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Expected variant; must match the checkpoint
        #[arg(long)]
        variant: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("usage error").replace('"', "'");
            eprintln!("error kind=usage code=2 message=\"{first}\"");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code())
        }
    }
}
