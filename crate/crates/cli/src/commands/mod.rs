pub mod explain;
pub mod features;
pub mod phantom;
pub mod preprocess;
pub mod train_eval;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;

use crate::{usage, CliResult};

/// Reads a JSON config; unreadable files are runtime errors, malformed ones usage errors.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).with_context(|| format!("{}: cannot read config", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(v) => Ok(v),
        Err(e) => usage(format!("{}: invalid config: {e}", path.display())),
    }
}

/// Volume files (`.mvol`, `.nii`) in a directory, sorted by name.
pub fn volume_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("{}: cannot list directory", dir.display()))? {
        let p = entry.with_context(|| format!("{}: cannot list directory", dir.display()))?.path();
        if p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("mvol" | "nii")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))
}
