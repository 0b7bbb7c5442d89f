//! Artifact writing. Every file goes to a temporary sibling first and is
//! renamed into place, so a failed run never leaves half a file behind.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct OutDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
    started: Instant,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).with_context(|| format!("writing {}", target.display()))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry { name: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `manifest.json` listing every artifact of this run.
    pub fn finish(mut self, info: ManifestInfo) -> Result<()> {
        let manifest = Manifest {
            subcommand: info.subcommand,
            version: env!("CARGO_PKG_VERSION"),
            config_path: info.config_path,
            config_sha256: info.config_sha256,
            seed: info.seed,
            args: info.args,
            workers: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        self.write_json("manifest.json", &manifest)
    }
}

pub struct ManifestInfo {
    pub subcommand: &'static str,
    pub config_path: String,
    pub config_sha256: String,
    pub seed: u64,
    pub args: Vec<String>,
}

#[derive(Serialize)]
struct Manifest {
    subcommand: &'static str,
    version: &'static str,
    config_path: String,
    config_sha256: String,
    seed: u64,
    args: Vec<String>,
    workers: usize,
    wall_time_s: f64,
    files: Vec<FileEntry>,
}

/// Shortest round-trip form; empty for missing values.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
