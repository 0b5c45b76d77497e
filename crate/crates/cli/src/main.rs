#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use posekit::parallel::Exec;
use posekit::Representation;

mod commands;
mod config;

use config::{ExperimentConfig, MatcherKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "posekit",
    version,
    about = "Pose refinement experiments: generate, refine, report, track"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic sample set (and a tracking sequence if configured).
    Generate(Common),
    /// Refine every sample and write traces and per-iteration metrics.
    Refine(Common),
    /// Summarize result files into report.csv and report.json.
    Report(Common),
    /// Track through a recorded frame sequence.
    Track {
        #[command(flatten)]
        common: Common,
        /// Sequence directory (default: <out>/sequence).
        #[arg(long)]
        frames: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum)]
    matcher: Option<MatcherKind>,
    #[arg(long)]
    repr: Option<Representation>,
    /// Single iteration count (replaces the configured sweep).
    #[arg(long)]
    iters: Option<usize>,
    /// Override a config field, e.g. `--set generate.samples_per_model=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = config::load(self.config.as_deref(), &self.sets)?;
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = Some(w);
        }
        if let Some(m) = self.matcher {
            cfg.matcher.kind = m;
        }
        if let Some(r) = self.repr {
            cfg.representation = r;
        }
        if let Some(k) = self.iters {
            cfg.iterations = vec![k];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn executor(cfg: &ExperimentConfig) -> Exec {
    #[cfg(feature = "parallel")]
    if let Some(n) = cfg.workers {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cfg.workers {
        Some(1) => Exec::Sequential,
        _ => Exec::Parallel,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            commands::generate(&cfg, executor(&cfg))
        }
        Command::Refine(c) => {
            let cfg = c.resolve()?;
            let outcome = commands::refine_cmd(&cfg, executor(&cfg))?;
            if outcome.failures * 2 > outcome.samples {
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "{} of {} samples failed",
                    outcome.failures,
                    outcome.samples
                )));
            }
            Ok(())
        }
        Command::Report(c) => commands::report(&c.resolve()?),
        Command::Track { common, frames } => {
            let cfg = common.resolve()?;
            commands::track(&cfg, frames.as_deref()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POSEKIT_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
