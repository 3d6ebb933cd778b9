//! Command-line front end: `gen`, `pretrain`, `supervised`, `probe`, `eval`.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_eval, cmd_gen, cmd_pretrain, cmd_probe, cmd_supervised, metrics_path, Target};
pub use config::ExperimentConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModalityArg {
    Video,
    Motion,
    Ensemble,
}

impl From<ModalityArg> for Target {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Video => Target::Video,
            ModalityArg::Motion => Target::Motion,
            ModalityArg::Ensemble => Target::Ensemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    Gen,
    /// Contrastive pretraining of both encoders.
    Pretrain,
    /// End-to-end supervised classifiers and their softmax ensemble.
    Supervised,
    /// Linear probe on frozen embeddings from a checkpoint.
    Probe,
    /// Held-out correspondence ROC-AUC of a checkpoint.
    Eval,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Pretrain => "pretrain",
            Self::Supervised => "supervised",
            Self::Probe => "probe",
            Self::Eval => "eval",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "egossl", version, about = "Video/head-motion correspondence learning on synthetic egocentric clips")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, action = ArgAction::Set, value_name = "BOOL")]
    pub deterministic: Option<bool>,
    /// Output directory (the dataset for `gen`, the run directory otherwise).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub modality: Option<ModalityArg>,
    /// Parameter-name prefix to freeze; repeatable.
    #[arg(long, global = true)]
    pub freeze: Vec<String>,
    /// Checkpoint for `probe` and `eval`.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Override a config key: `--set generator.video_noise=0.1`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl Cli {
    /// The config file with every flag applied.
    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        for o in &self.overrides {
            cfg.set(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(d) = self.deterministic {
            cfg.deterministic = d;
        }
        cfg.freeze.extend(self.freeze.iter().cloned());
        if let Some(c) = &self.checkpoint {
            cfg.paths.checkpoint = Some(c.clone());
        }
        if let Some(out) = &self.out {
            match self.command {
                Command::Gen => cfg.paths.dataset = out.clone(),
                _ => cfg.paths.run = out.clone(),
            }
        }
        cfg.resolve();
        Ok(cfg)
    }
}

/// Caps rayon's global pool at `EGOSSL_THREADS` when set.
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EGOSSL_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("EGOSSL_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(Error::Config("EGOSSL_THREADS must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = cli.resolve_config()?;
    let out = match cli.command {
        Command::Gen => cfg.paths.dataset.clone(),
        _ => cfg.paths.run.clone(),
    };
    commands::run_and_record(cli.command.name(), &cfg, &out, cli.modality.map(Target::from))?;
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
