//! Command-line harness for the `graphcert` experiments.

pub mod config;
pub mod experiments;
mod output;

use std::path::PathBuf;

pub use config::{parse_config, Experiment, ExperimentConfig, Format, Settings, OUT_DIR_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_BOUND_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Clap(clap::Error),
    Usage(String),
    Capacity(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) if !e.use_stderr() => EXIT_OK,
            CliError::Capacity(_) => EXIT_CAPACITY,
            _ => EXIT_USAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Capacity(m) => write!(f, "error: {m}; reduce the graph size or the number of copies"),
            CliError::Io(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<graphcert::Error> for CliError {
    fn from(e: graphcert::Error) -> Self {
        match e {
            graphcert::Error::Capacity { .. } => CliError::Capacity(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Where an experiment wrote its files and whether its bound check held.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub pass: bool,
}

/// Runs one resolved experiment inside a pool of the requested size.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    let workers = cfg.settings.workers.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    pool.install(|| experiments::dispatch(cfg))
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let configs = match parse_config(argv) {
        Ok(c) => c,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    let mut code = EXIT_OK;
    for cfg in &configs {
        match run(cfg) {
            Ok(out) => {
                println!("{} {}", if out.pass { "pass" } else { "FAIL" }, out.dir.join("summary.json").display());
                if !out.pass {
                    code = code.max(EXIT_BOUND_FAILED);
                }
            }
            Err(e) => {
                eprintln!("{e}");
                return e.exit_code();
            }
        }
    }
    code
}
