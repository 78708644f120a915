//! Output directory handling and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{ExpError, ExpResult};

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub timings_seconds: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Collects output files for one command invocation. Every file written
/// through it is listed in the manifest with its checksum.
pub struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
    seeds: BTreeMap<String, u64>,
    timings: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Output {
    pub fn create(dir: &Path) -> ExpResult<Self> {
        fs::create_dir_all(dir).map_err(|e| ExpError::io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), seeds: BTreeMap::new(), timings: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> ExpResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| ExpError::io(&path, e))?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    /// Writes a CSV with a header row.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> ExpResult<PathBuf> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.iter().map(|c| cell(c)).collect::<Vec<_>>().join(","));
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn seed(&mut self, label: impl Into<String>, seed: u64) {
        self.seeds.insert(label.into(), seed);
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64();
        out
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn finish(self, command: &str, cfg: &ExperimentConfig) -> ExpResult<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            seeds: self.seeds,
            timings_seconds: self.timings,
            files: self.files,
        };
        let path = self.dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| ExpError::io(&path, e))?;
        fs::write(&path, json).map_err(|e| ExpError::io(&path, e))?;
        Ok(manifest)
    }
}

/// Recomputes checksums of the files listed in a manifest file. Returns the
/// names whose content no longer matches.
pub fn verify_manifest(dir: &Path) -> ExpResult<Vec<String>> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| ExpError::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ExpError::io(&path, e))?;
    let files = value["files"].as_array().ok_or_else(|| ExpError::io(&path, "manifest has no file list"))?;
    let mut bad = Vec::new();
    for f in files {
        let name = f["path"].as_str().unwrap_or_default();
        let expected = f["sha256"].as_str().unwrap_or_default();
        let file = dir.join(name);
        match fs::read(&file) {
            Ok(bytes) if sha256_hex(&bytes) == expected => {}
            _ => bad.push(name.to_string()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn files_are_listed_and_verified() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::create(dir.path()).unwrap();
        out.csv("a.csv", &["x", "label"], &[vec!["1".into(), "p,q".into()]]).unwrap();
        out.seed("data", 4);
        let m = out.finish("test", &ExperimentConfig::default()).unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(fs::read_to_string(dir.path().join("a.csv")).unwrap(), "x,label\n1,\"p,q\"\n");
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.csv"), "tampered").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["a.csv".to_string()]);
    }
}
