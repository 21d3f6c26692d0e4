//! `manifest.json`: what ran, with which inputs, producing which files.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub artifacts: Vec<String>,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).with_context(|| format!("{}: read failed", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<InputHash>,
    artifacts: Vec<PathBuf>,
    started: SystemTime,
    clock: Instant,
}

impl Recorder {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, config: impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputHash { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Writes the manifest; artifact paths are stored relative to its directory when possible.
    pub fn finish(self, manifest_path: &Path) -> Result<()> {
        let base = manifest_path.parent().unwrap_or(Path::new(""));
        let artifacts = self
            .artifacts
            .iter()
            .map(|a| a.strip_prefix(base).unwrap_or(a).display().to_string())
            .collect();
        let m = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            artifacts,
            started_unix_s: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_s: self.clock.elapsed().as_secs_f64(),
        };
        write_json(manifest_path, &m)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s + "\n").with_context(|| format!("{}: cannot write", path.display()))
}

/// Sidecar manifest path for commands whose output is a single file.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
