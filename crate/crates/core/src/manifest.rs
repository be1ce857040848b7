//! Run manifests: the config, seeds and output hashes of one subcommand run.
//!
//! A manifest is written as `incomplete` before any output and rewritten as
//! `complete` at the end, so an interrupted run is recognizable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Hashes of files the run read.
    pub inputs: Vec<OutputRecord>,
    pub outputs: Vec<OutputRecord>,
    pub status: RunStatus,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl Manifest {
    pub fn new(subcommand: &str, config: RunConfig) -> Self {
        let seeds = BTreeMap::from([
            ("run".to_string(), config.seed),
            ("train".to_string(), config.train.seed),
            ("train_data".to_string(), config.data.train_seed),
            ("eval_data".to_string(), config.data.eval_seed),
        ]);
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            status: RunStatus::Incomplete,
        }
    }

    pub fn record_input(&mut self, path: &str, bytes: &[u8]) {
        self.inputs.push(OutputRecord {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    /// Records an output, replacing an earlier record of the same path.
    pub fn record_output(&mut self, path: &str, bytes: &[u8]) {
        self.outputs.retain(|o| o.path != path);
        self.outputs.push(OutputRecord {
            path: path.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.to_json()?)?;
        Ok(())
    }

    /// Loads a manifest from a file or from a run directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        Self::from_json(&std::fs::read_to_string(file)?)
    }

    /// Re-hashes every recorded output under `dir`. Returns the paths
    /// whose content differs or is missing.
    pub fn verify_outputs(&self, dir: &Path) -> Result<Vec<String>> {
        if self.status != RunStatus::Complete {
            return Err(Error::InvalidArgument(
                "manifest is marked incomplete".into(),
            ));
        }
        let mut bad = Vec::new();
        for o in &self.outputs {
            match std::fs::read(dir.join(&o.path)) {
                Ok(bytes) if sha256_hex(&bytes) == o.sha256 => {}
                _ => bad.push(o.path.clone()),
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn json_round_trip() {
        let mut m = Manifest::new(
            "derain",
            RunConfig {
                lambda: Some(0.1 + 0.2),
                ..Default::default()
            },
        );
        m.record_output("out.vdt", b"xyz");
        m.record_output("out.vdt", b"xyzw");
        assert_eq!(m.outputs.len(), 1);
        let text = m.to_json().unwrap();
        let back = Manifest::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn verify_detects_changes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"one").unwrap();
        let mut m = Manifest::new("gen-data", RunConfig::default());
        m.record_output("a.txt", b"one");
        assert!(m.verify_outputs(dir.path()).is_err());
        m.status = RunStatus::Complete;
        assert!(m.verify_outputs(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.txt"), b"two").unwrap();
        assert_eq!(
            m.verify_outputs(dir.path()).unwrap(),
            vec!["a.txt".to_string()]
        );
    }
}
