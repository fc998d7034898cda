//! Experiment configuration, dispatch and artifact writers for the `fracpar`
//! command-line driver.
//!
//! Runs are deterministic: a fixed configuration and seed give byte-identical
//! CSV and JSON output.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;

pub use config::{Experiment, ExperimentConfig};
pub use output::{Check, ResultBundle, Summary, Table};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] fracpar_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for everything raised while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn summary(cfg: &ExperimentConfig, checks: Vec<Check>, error: Option<String>) -> Summary {
    Summary {
        experiment: cfg.experiment.name().into(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").into(),
        checks,
        error,
    }
}

/// Runs one experiment in memory.
pub fn run(cfg: &ExperimentConfig, threads: usize) -> Result<ResultBundle, CliError> {
    cfg.validate()?;
    let (tables, checks) = experiments::dispatch(cfg, threads)?;
    Ok(ResultBundle {
        tables,
        summary: summary(cfg, checks, None),
    })
}

/// Runs and writes outputs under `out`. On a numerical failure a diagnostic
/// `summary.json` carrying the error is written before the error returns.
pub fn run_to_dir(cfg: &ExperimentConfig, threads: usize, out: &Path) -> Result<Summary, CliError> {
    match run(cfg, threads) {
        Ok(bundle) => {
            bundle.write(out)?;
            Ok(bundle.summary)
        }
        Err(e @ CliError::Config(_)) => Err(e),
        Err(e) => {
            output::write_summary(&out.join("summary.json"), &summary(cfg, Vec::new(), Some(e.to_string())))?;
            Err(e)
        }
    }
}
