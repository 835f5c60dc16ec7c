//! Run manifests and atomic output writing.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub workers: usize,
    /// SHA-256 of the compact JSON form of `config`.
    pub config_hash: String,
    pub config: Value,
    pub outputs: Vec<String>,
}

pub fn config_hash(config: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(config: &RunConfig, workers: usize, outputs: Vec<String>) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: config.subcommand.name().into(),
            seed: config.seed,
            workers,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            outputs,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// The embedded config, checked against the recorded hash.
    pub fn run_config(&self) -> Result<RunConfig> {
        let config = RunConfig::from_value(self.config.clone())?;
        let hash = config_hash(&config)?;
        ensure!(
            hash == self.config_hash,
            "config hash mismatch: manifest records {}, config hashes to {hash}",
            self.config_hash
        );
        Ok(config)
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

fn pretty(v: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `<name>.json`, one CSV per table and `manifest.json` into `dir`;
/// returns the paths written.
pub fn write_outputs(
    dir: &Path,
    config: &RunConfig,
    workers: usize,
    outcome: &Outcome,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = config.subcommand.name();
    let mut files = vec![(format!("{name}.json"), pretty(&outcome.json)?)];
    for t in &outcome.tables {
        files.push((format!("{}.csv", t.name), t.render().into_bytes()));
    }
    let manifest = Manifest::new(
        config,
        workers,
        files.iter().map(|(n, _)| n.clone()).collect(),
    )?;
    files.push(("manifest.json".into(), pretty(&manifest)?));
    let mut written = Vec::new();
    for (n, bytes) in files {
        let path = dir.join(n);
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
