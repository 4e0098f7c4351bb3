//! The `cell-twin` command line.
//!
//! ```text
//! cell-twin <ingest|calibrate|simulate|retire|evaluate> --config <path>
//!           [--cell <id>] [--seed N] [--out <dir>]
//! ```
//!
//! Each stage reads the previous stage's outputs from the output directory.
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.

mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use thiserror::Error;

pub use commands::derive_cell_seed;
pub use config::{RunConfig, Schedule, Thresholds};

#[derive(Debug, Error, PartialEq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Ingest,
    Calibrate,
    Simulate,
    Retire,
    Evaluate,
}

#[derive(Debug, Parser)]
#[command(name = "cell-twin", version, about = "Battery capacity-fade digital twin")]
pub struct Args {
    #[arg(value_enum)]
    pub stage: Stage,
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Restrict the stage to one cell.
    #[arg(long)]
    pub cell: Option<String>,
    /// Global seed; overrides `CELL_TWIN_SEED` and the config.
    #[arg(long, env = "CELL_TWIN_SEED")]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Skip linear extension during ingest.
    #[arg(long)]
    pub no_extend: bool,
    /// Consecutive points at or below the trigger needed to fire it.
    #[arg(long)]
    pub trigger_persist: Option<usize>,
    #[arg(long)]
    pub retire_floor: Option<f64>,
    /// Decision cycle for `retire` (defaults to the trigger cycle).
    #[arg(long)]
    pub at_cycle: Option<u32>,
}

/// Parses `argv`, runs the stage and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Validates the configuration, then runs the requested stage.
pub fn run(args: &Args) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(floor) = args.retire_floor {
        cfg.thresholds.retire_floor = floor;
    }
    if let Some(p) = args.trigger_persist {
        cfg.trigger_persist = p;
    }
    if let Some(w) = args.workers {
        cfg.workers = Some(w);
    }
    if args.no_extend {
        cfg.preprocess.extend = false;
    }
    cfg.validate()?;

    let ctx = commands::Context {
        seed: args.seed.or(cfg.seed).unwrap_or(0),
        out: args
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out")),
        cell: args.cell.clone(),
        at_cycle: args.at_cycle,
        cfg,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = ctx.cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    pool.install(|| match args.stage {
        Stage::Ingest => commands::ingest(&ctx),
        Stage::Calibrate => commands::calibrate(&ctx),
        Stage::Simulate => commands::simulate(&ctx),
        Stage::Retire => commands::retire(&ctx),
        Stage::Evaluate => commands::evaluate(&ctx),
    })
}
