use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Sidecar written next to every primary output as `<file>.meta.json`.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl Provenance {
    pub fn new(command: &'static str, config_hash: String, seed: Option<u64>) -> Self {
        Self { tool: "exceed", version: env!("CARGO_PKG_VERSION"), command, config_hash, seed, inputs: Vec::new() }
    }

    pub fn input(mut self, path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(self)
    }

    pub fn write_for(&self, output: &Path) -> Result<(), CliError> {
        let path = sidecar(output);
        let json = serde_json::to_string_pretty(self).expect("provenance serializes");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
    }
}

pub fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// `dir/stem.csv` -> `dir/stem.<suffix>`.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
