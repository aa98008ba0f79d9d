//! Output directory handling and the per-run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes files atomically (temp file then rename) and remembers them.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &Path, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        write_atomic(&path, bytes)?;
        if !self.written.iter().any(|p| p == rel) {
            self.written.push(rel.to_path_buf());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("output serializes");
        s.push('\n');
        self.write(Path::new(rel), s.as_bytes())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    /// SHA-256 of the resolved config serialized as compact JSON.
    pub config_sha256: String,
    pub config: Config,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub jobs: usize,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn config_hash(config: &Config) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write(Path::new("a/b.txt"), b"x").unwrap();
        out.write(Path::new("a/b.txt"), b"y").unwrap();
        assert_eq!(fs::read(dir.path().join("a/b.txt")).unwrap(), b"y");
        assert!(!dir.path().join("a/b.txt.tmp").exists());
        assert_eq!(out.written(), &[PathBuf::from("a/b.txt")]);
    }

    #[test]
    fn hash_tracks_config_content() {
        let a = crate::config::parse(r#"{"bitwidth":8}"#).unwrap();
        let b = crate::config::parse(r#"{"bitwidth":4}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
