//! Experiment runner for `nnsym`: config parsing, IDX ingestion,
//! subcommands and reproducible result files.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod idx;

use std::path::{Path, PathBuf};

use anyhow::Result;

use config::{ConfigFile, Overrides, RunConfig, Subcommand};

/// Resolves and validates a config, runs it and writes its outputs. Nothing
/// is written unless the config is valid and the run succeeds.
pub fn execute(
    sub: Subcommand,
    config_path: Option<&Path>,
    overrides: &Overrides,
    workers: usize,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let file = match config_path {
        Some(p) => config::read_config(p)?,
        None => ConfigFile::default(),
    };
    let config = config::resolve(sub, file, overrides)?;
    run_and_write(&config, workers, out)
}

pub fn run_and_write(config: &RunConfig, workers: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let outcome = commands::run(config, workers)?;
    artifacts::write_outputs(out, config, workers, &outcome)
}

/// Re-runs the config recorded in a manifest.
pub fn replay(manifest: &Path, workers: Option<usize>, out: &Path) -> Result<Vec<PathBuf>> {
    let m = artifacts::Manifest::read(manifest)?;
    let config = m.run_config()?;
    run_and_write(&config, workers.unwrap_or(m.workers), out)
}
