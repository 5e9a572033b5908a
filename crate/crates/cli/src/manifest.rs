//! Run manifests: the resolved config, the seed, and a sha256 for every
//! file a run read or wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const RUN_MANIFEST: &str = "run-manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory (outputs) or the dataset root (inputs).
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Absent for commands that only read fold results.
    pub seed: Option<u64>,
    pub config: Option<ExperimentConfig>,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every regular file under `root`, sorted, as paths relative to `root`.
/// The run manifest itself is skipped.
pub fn list_files(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
                out.push(path.strip_prefix(root).expect("path under root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn hash_all(root: &Path, files: &[PathBuf]) -> Result<Vec<Artifact>, CliError> {
    files
        .iter()
        .map(|rel| {
            Ok(Artifact {
                // forward slashes keep manifests comparable across platforms
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                sha256: sha256_file(&root.join(rel))?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let path = out_dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
