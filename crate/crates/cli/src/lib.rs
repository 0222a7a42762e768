//! `mdfsc` command-line pipeline: `synth | train-ae | fit-dict | score | eval`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: msg.into() }
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Self { code: EXIT_DATA, message: msg.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<mdfsc::Error> for CliError {
    fn from(e: mdfsc::Error) -> Self {
        use mdfsc::Error::*;
        let code = match e {
            Contract(_) => EXIT_CONFIG,
            Numeric(_) => EXIT_NUMERIC,
            Ingestion { .. } | Fit(_) | Load(_) | UndefinedMetric(_) | Io(_) => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScorerKind {
    /// Top-k sparse-coding residuals.
    Mdfsc,
    /// Whole-image reconstruction MSE of the fully convolutional model.
    Recon,
}

#[derive(Debug, Parser)]
#[command(
    name = "mdfsc",
    about = "Multi-scale deep feature sparse coding for image anomaly detection",
    after_help = "Any config field can be overridden as --section.key=value (or --seed=N, --image_size=N, --train_fraction=F)."
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (1 gives the sequential reference path).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with train/test manifests.
    Synth,
    /// Train the autoencoder (and the reconstruction baseline).
    TrainAe,
    /// Fit the dictionary on features of the training images.
    FitDict,
    /// Score test images into a JSON-lines report file.
    Score {
        #[arg(long, value_enum, default_value = "mdfsc")]
        scorer: ScorerKind,
    },
    /// Compute AUC and AP from a report file and the labeled manifest.
    Eval,
    /// Print the resolved configuration.
    Config,
}

const TOP_LEVEL_KEYS: [&str; 3] = ["seed", "image_size", "train_fraction"];

/// Pull `--key=value` config overrides out of the argument list.
pub fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let parsed = a.to_str().and_then(|s| s.strip_prefix("--")).and_then(|s| s.split_once('='));
        match parsed {
            Some((k, v)) if k.contains('.') || TOP_LEVEL_KEYS.contains(&k) => {
                overrides.push((k.to_string(), v.to_string()))
            }
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

/// Parse arguments and run one command. `args` includes the program name.
pub fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let (rest, overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::config(e.to_string())),
    };
    let env_seed = std::env::var("MDFSC_SEED").ok();
    let cfg = RunConfig::resolve(cli.config.as_deref(), env_seed.as_deref(), &overrides)?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        // Fails only if a pool already exists (repeated in-process runs).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    commands::dispatch(&cli.command, &cfg)
}
