//! `geom`: buffer, condense, evaluate and analyze from a TOML config.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geom_core::evaluator::CoresetMethod;
use geom_core::WindowMode;
use serde::de::DeserializeOwned;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or input paths (exit code 2).
    Usage(String),
    /// Failure while running (exit code 1).
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Wraps any library error as a runtime failure.
pub fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "geom",
    version,
    about = "Graph condensation by expanding-window trajectory matching"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Graph bundle directory; a block model is generated when absent.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Train curriculum experts and save their trajectories.
    Buffer {
        #[arg(long)]
        experts: Option<usize>,
    },
    /// Condense the dataset by matching stored trajectories.
    Condense {
        /// Directory holding the `.traj` files.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// expanding, fixed, sliding or stepwise.
        #[arg(long, value_parser = parse_enum::<WindowMode>)]
        window_mode: Option<WindowMode>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train models on a condensed set (or the full graph) and report accuracy.
    Eval {
        /// Condensed-set bundle; the full training split when absent.
        #[arg(long)]
        condensed: Option<PathBuf>,
    },
    /// Select a coreset baseline, save it and evaluate it.
    Coreset {
        /// random, herding or kcenter.
        #[arg(long, value_parser = parse_enum::<CoresetMethod>)]
        method: Option<CoresetMethod>,
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Decompose a student's accumulated error against an expert trajectory.
    Analyze {
        /// Use the built-in linear-regression toy.
        #[arg(long)]
        toy: bool,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        condensed: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Generate a stochastic block model graph bundle.
    SbmGen,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Buffer { .. } => "buffer",
            Command::Condense { .. } => "condense",
            Command::Eval { .. } => "eval",
            Command::Coreset { .. } => "coreset",
            Command::Analyze { .. } => "analyze",
            Command::SbmGen => "sbm-gen",
        }
    }

    /// Command-specific flags take precedence over the file.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Buffer { experts } => {
                if let Some(m) = experts {
                    cfg.buffer.num_experts = *m;
                }
            }
            Command::Condense {
                trajectories,
                window_mode,
                iterations,
            } => {
                if let Some(t) = trajectories {
                    cfg.inputs.trajectories = Some(t.clone());
                }
                if let Some(m) = window_mode {
                    cfg.matching.window_mode = *m;
                }
                if let Some(k) = iterations {
                    cfg.matching.iterations = *k;
                }
            }
            Command::Eval { condensed } => {
                if let Some(c) = condensed {
                    cfg.inputs.condensed = Some(c.clone());
                }
            }
            Command::Coreset { method, ratio } => {
                if let Some(m) = method {
                    cfg.coreset.method = *m;
                }
                if let Some(r) = ratio {
                    cfg.coreset.ratio = *r;
                }
            }
            Command::Analyze {
                toy,
                trajectory,
                condensed,
                tolerance,
            } => {
                cfg.analyze.toy |= toy;
                if let Some(t) = trajectory {
                    cfg.inputs.trajectory = Some(t.clone());
                }
                if let Some(c) = condensed {
                    cfg.inputs.condensed = Some(c.clone());
                }
                if let Some(t) = tolerance {
                    cfg.analyze.tolerance = *t;
                }
            }
            Command::SbmGen => {}
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.common.out {
        cfg.out = out.clone();
    }
    if let Some(t) = cli.common.threads {
        cfg.threads = Some(t);
    }
    if let Some(d) = &cli.common.dataset {
        cfg.dataset.path = Some(d.clone());
    }
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let threads = cfg
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(runtime)?;
    commands::write_snapshot(&cfg, cli.command.name())?;
    pool.install(|| match &cli.command {
        Command::Buffer { .. } => commands::buffer(&cfg),
        Command::Condense { .. } => commands::condense(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Coreset { .. } => commands::coreset(&cfg),
        Command::Analyze { .. } => commands::analyze(&cfg),
        Command::SbmGen => commands::sbm_gen(&cfg),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
