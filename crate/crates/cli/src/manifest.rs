use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use wwtp_empc::experiments::ExperimentConfig;

/// Written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    /// SHA-256 over the effective configuration and every input file.
    pub input_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub failures: Vec<String>,
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn input_hash(config_toml: &str, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(config_toml.as_bytes());
    for (name, digest) in inputs {
        h.update(name.as_bytes());
        h.update(digest.as_bytes());
    }
    hex::encode(h.finalize())
}
