//! Batch front end: `ingest`, `gen-queries`, `compile`, `run` and `eval`.
//!
//! Every command reads a flat `key = value` run configuration; `--set`
//! overrides are applied on top of the file.

mod commands;
mod files;

use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rog_core::config::RunConfig;
use rog_core::QueryType;

pub use commands::{eval, gen_queries, ingest, run, show_plans};

#[derive(Parser, Debug)]
#[command(
    name = "rog",
    version,
    about = "Step-wise query answering over knowledge graphs"
)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load the triple splits and write the abstraction map.
    Ingest,
    /// Sample query instances and write the query and answer files.
    GenQueries {
        /// Comma-separated query types; all 14 when omitted.
        #[arg(long, value_delimiter = ',')]
        types: Vec<QueryType>,
        /// Instances per type.
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Pretty-print the plan of every query.
    Compile,
    /// Execute every query with the configured backend.
    Run,
    /// Score predictions against the answer file.
    Eval,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some queries failed; outputs were still written.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::Partial => 1,
        }
    }
}

/// Exit code for configuration, input and format errors.
pub const EXIT_ERROR: i32 = 2;

pub fn load_config(path: Option<&PathBuf>, sets: &[String]) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.apply_overrides(sets.iter().map(String::as_str))?;
    Ok(cfg)
}

/// Runs one parsed command line, writing human-readable output to `out`.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let cfg = load_config(cli.config.as_ref(), &cli.sets)?;
    match &cli.command {
        Command::Ingest => ingest(&cfg, out),
        Command::GenQueries { types, count } => {
            let types = if types.is_empty() {
                QueryType::ALL.to_vec()
            } else {
                types.clone()
            };
            gen_queries(&cfg, &types, *count, out)
        }
        Command::Compile => show_plans(&cfg, out),
        Command::Run => run(&cfg, out),
        Command::Eval => eval(&cfg, out),
    }
}
