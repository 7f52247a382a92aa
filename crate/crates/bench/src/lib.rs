//! Experiment driver for the `ctpg` estimators.
//!
//! Each subcommand reads a flat config file, runs its experiment, writes a
//! CSV (plus a matplotlib script) and evaluates a set of pass/fail checks.
//! The library exposes the same commands so tests can run them in-process.

pub mod commands;
pub mod config;
pub mod oracle_cache;
pub mod output;
pub mod setup;

use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use config::{Config, ConfigError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl BenchError {
    /// 2 for anything wrong with the invocation, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Io(_) => 2,
            BenchError::Run(_) => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path, e: impl fmt::Display) -> BenchError {
    BenchError::Io(format!("{}: {e}", path.display()))
}

/// One named pass/fail verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

/// Settings shared by every command that writes files.
#[derive(Debug, Clone)]
pub struct OutputOptions {
    pub path: Option<PathBuf>,
    /// Include wallclock columns. Off by default so reruns are byte-identical.
    pub timing: bool,
    pub plot: bool,
}

impl OutputOptions {
    pub fn read(cfg: &Config, path: Option<&Path>) -> Result<Self, ConfigError> {
        Ok(Self {
            path: path.map(Path::to_path_buf),
            timing: cfg.get_or("output.timing", false)?,
            plot: cfg.get_or("output.plot", true)?,
        })
    }

    pub(crate) fn write(&self, table: &output::Table, fingerprint: &str, plot: &str) -> Result<(), BenchError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        table.write(path, fingerprint).map_err(|e| io_err(path, e))?;
        if self.plot {
            output::write_plot_script(path, plot).map_err(|e| io_err(path, e))?;
        }
        Ok(())
    }
}

/// Runs `f` on a pool of `threads` workers, or inline for 0 or 1.
pub(crate) fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, BenchError> {
    if threads <= 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BenchError::Run(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
