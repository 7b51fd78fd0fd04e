//! Output directory handling: atomic file writes and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

/// Write `path` via a temporary file in the same directory and a rename, so
/// readers never see a half-written file.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf).with_context(|| format!("writing {}", path.display()))?;
        buf.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

/// Machine-readable record of a run: resolved config per stage and a digest
/// of every artifact. Deliberately free of timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub stages: BTreeMap<String, RunConfig>,
    /// Path relative to the output directory to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Tracks the files one command writes and folds them into the manifest.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(
        &mut self,
        rel: &str,
        fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> anyhow::Result<PathBuf> {
        let path = self.root.join(rel);
        write_atomic(&path, fill)?;
        self.written.push(PathBuf::from(rel));
        Ok(path)
    }

    /// Merge this command's artifacts and config into `manifest.json`.
    pub fn finish(self, stage: &str, config: &RunConfig) -> anyhow::Result<()> {
        let manifest_path = self.root.join(MANIFEST);
        let mut manifest = match std::fs::read_to_string(&manifest_path) {
            Ok(text) => serde_json::from_str::<Manifest>(&text)
                .ok()
                .filter(|m| m.schema_version == MANIFEST_SCHEMA),
            Err(_) => None,
        }
        .unwrap_or_else(|| Manifest {
            schema_version: MANIFEST_SCHEMA,
            seed: config.run.seed,
            stages: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        });
        manifest.seed = config.run.seed;
        manifest.stages.insert(stage.to_string(), config.clone());
        for rel in &self.written {
            let bytes = std::fs::read(self.root.join(rel))?;
            let key = rel.to_string_lossy().replace('\\', "/");
            manifest.artifacts.insert(key, sha256_hex(&bytes));
        }
        let text = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&manifest_path, |w| writeln!(w, "{text}"))
    }
}
