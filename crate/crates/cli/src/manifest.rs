//! Output manifest: config hash, seeds, and a content hash per artifact.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use scorelab_core::Result;

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    experiment: &'a str,
    config_sha256: String,
    seeds: &'a [u64],
    created_unix: u64,
    files: Vec<FileEntry>,
}

pub struct Manifest {
    experiment: String,
    config_sha256: String,
    seeds: Vec<u64>,
    out_dir: PathBuf,
    files: Vec<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

impl Manifest {
    pub fn new(experiment: &str, config_json: &str, seeds: &[u64], out_dir: &Path) -> Self {
        Manifest {
            experiment: experiment.to_string(),
            config_sha256: sha256_hex(config_json.as_bytes()),
            seeds: seeds.to_vec(),
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    /// Register an artifact (path relative to the output directory).
    pub fn add(&mut self, rel: impl Into<PathBuf>) {
        self.files.push(rel.into());
    }

    /// Hash every registered file and write `manifest.json`.
    pub fn write(&self) -> Result<()> {
        let mut entries = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let full = self.out_dir.join(rel);
            let bytes = std::fs::read(&full)?;
            entries.push(FileEntry {
                path: rel.to_string_lossy().into_owned(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let doc = ManifestDoc {
            experiment: &self.experiment,
            config_sha256: self.config_sha256.clone(),
            seeds: &self.seeds,
            created_unix,
            files: entries,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(scorelab_core::Error::from)?;
        std::fs::write(self.out_dir.join("manifest.json"), text)?;
        Ok(())
    }
}
