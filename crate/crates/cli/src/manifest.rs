//! `manifest.json` written next to every command's outputs: inputs with
//! their hashes, the resolved configuration and its hash, and the outputs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Serialize)]
struct InputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    threads: usize,
    inputs: Vec<InputEntry>,
    config: &'a RunConfig,
    config_sha256: String,
    outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the configuration's canonical JSON form.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

pub struct ManifestBuilder {
    command: &'static str,
    threads: usize,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, threads: usize) -> Self {
        Self { command, threads, inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    pub fn write(&self, cfg: &RunConfig, path: &Path) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
                Ok(InputEntry { path: p.display().to_string(), sha256: sha256_hex(&bytes) })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            threads: self.threads,
            inputs,
            config: cfg,
            config_sha256: config_hash(cfg)?,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
        };
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
