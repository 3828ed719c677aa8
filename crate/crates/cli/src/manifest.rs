use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// What is needed to rerun a command: the resolved configuration, its
/// hash, the seeds in effect and the tool versions.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config_sha256: String,
    pub config_file: Option<&'a Path>,
    pub config: &'a RunConfig,
    pub seeds: BTreeMap<&'static str, u64>,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    format!("{:x}", Sha256::digest(canonical.as_bytes()))
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config_file: Option<&'a Path>, config: &'a RunConfig) -> Self {
        let seeds = BTreeMap::from([
            ("sampling", config.sampling.rng_seed),
            ("train", config.train.rng_seed),
            ("toy", config.toy.seed),
        ]);
        let versions = BTreeMap::from([
            ("subrank", subrank::VERSION),
            ("subrank-cli", env!("CARGO_PKG_VERSION")),
        ]);
        Self {
            command,
            config_sha256: config_hash(config),
            config_file,
            config,
            seeds,
            versions,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Writes the manifest and the resolved configuration, which reruns
    /// the command when passed back with `--config`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let toml = toml::to_string(self.config).map_err(|e| CliError::Report(e.to_string()))?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), toml)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}
