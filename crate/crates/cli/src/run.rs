//! Run directory bookkeeping. The manifest is saved after every output so a
//! crash leaves it marked incomplete with the files written so far.

use std::path::{Path, PathBuf};

use anyhow::Context;
use derain_core::{Manifest, RunConfig, RunStatus};

pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    pub fn start(name: &str, cfg: RunConfig) -> anyhow::Result<Self> {
        let dir = cfg.output.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = Manifest::new(name, cfg);
        manifest.save(&dir)?;
        Ok(Self { dir, manifest })
    }

    pub fn config(&self) -> &RunConfig {
        &self.manifest.config
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.manifest
            .record_input(&path.display().to_string(), &bytes);
        Ok(bytes)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.record_output(rel, bytes);
        self.manifest.save(&self.dir)?;
        Ok(())
    }

    pub fn finish(&mut self) -> anyhow::Result<()> {
        self.manifest.status = RunStatus::Complete;
        self.manifest.save(&self.dir)?;
        Ok(())
    }
}

/// Paths whose hash differs between two manifests, or that only one has.
pub fn compare_outputs(a: &Manifest, b: &Manifest) -> Vec<String> {
    let mut bad = Vec::new();
    for o in &a.outputs {
        match b.outputs.iter().find(|p| p.path == o.path) {
            Some(p) if p.sha256 == o.sha256 => {}
            _ => bad.push(o.path.clone()),
        }
    }
    for p in &b.outputs {
        if !a.outputs.iter().any(|o| o.path == p.path) {
            bad.push(p.path.clone());
        }
    }
    bad
}
