//! The `brw` command line: experiment runners writing CSV/JSON artifacts
//! plus a `manifest.json` of content hashes.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{Experiment, RunConfig};
pub use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] brw_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// Artifacts were written, but a checked property failed.
    #[error("check failed: {0}")]
    Violation(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 2 validation, 3 invariant violation, 4 capacity, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use brw_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Core(E::InvalidParameter { .. } | E::Precondition(_) | E::EmptyInput(_)) => 2,
            CliError::Core(E::Invariant(_)) | CliError::Violation(_) => 3,
            CliError::Core(E::Capacity { .. }) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("csv: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "brw", version, about = "Branching random walks on a cube: simulation, coupling, percolation, renormalization")]
pub struct Cli {
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for every artifact and the manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Independent replicas from the configured start.
    Simulate(SimulateArgs),
    /// Continuous walk coupled with its grid discretization.
    Couple(CoupleArgs),
    /// Oriented bond percolation from the origin.
    Percolate(PercolateArgs),
    /// Block parameter search, or ledgers at given block parameters.
    Renorm(RenormArgs),
    /// Empirical tail P{s < X < inf} from a simulate or percolate CSV.
    Tail(TailArgs),
    /// Exponential fit to a tail CSV.
    Fit(FitArgs),
    /// Closed-form birth-death extinction probabilities.
    Oracle(OracleArgs),
    /// Survival frequency from each starting site.
    Probe(ProbeArgs),
    /// Dump the discretized kernel.
    Discretize(DiscretizeArgs),
    /// Canned experiment pipelines.
    Recipe {
        #[command(subcommand)]
        recipe: Recipe,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long, default_value = "simulate.csv")]
    pub out: PathBuf,
    /// Also dump one replica's genealogy as JSONL.
    #[arg(long)]
    pub genealogy: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub genealogy_replica: u64,
}

#[derive(Debug, Args)]
pub struct CoupleArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Grid resolution `n`, or `auto` for the smallest supercritical one.
    #[arg(long, default_value = "auto")]
    pub resolution: String,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long, default_value = "couple.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PercolateArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub height: u32,
    #[arg(long, default_value_t = 1000)]
    pub replicas: usize,
    #[arg(long, default_value = "percolate.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenormArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Target bond probability; overrides `renorm.p`.
    #[arg(long)]
    pub p: Option<f64>,
    /// Search the (M, T) grid and write `block.toml`.
    #[arg(long, conflicts_with = "block")]
    pub search: bool,
    /// Block parameters from a previous search.
    #[arg(long, required_unless_present = "search")]
    pub block: Option<PathBuf>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Subdirectory of the output directory.
    #[arg(long, default_value = "renorm")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TailArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `start:stop:step`
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value = "tail.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "fit.txt")]
    pub out: PathBuf,
    /// Largest `s` admitted into the window.
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub tail_floor: f64,
    #[arg(long, default_value_t = 0.5)]
    pub tail_ceil: f64,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value = "oracle.txt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub replicas: Option<usize>,
    #[arg(long, default_value = "probe.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiscretizeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub resolution: u32,
    #[arg(long, default_value = "kernel.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Recipe {
    /// lambda = 3 on {-5..5} with the lazy walk: simulate, tail, fit.
    TailDemo {
        #[arg(long, default_value_t = 10_000)]
        replicas: usize,
    },
}

/// Runs one command; returns the manifest that was written.
pub fn run(cli: &Cli) -> Result<Manifest, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // only the first call in a process can size the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    commands::dispatch(cli)
}
