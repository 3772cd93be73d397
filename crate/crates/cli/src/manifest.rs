use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Path relative to the output directory.
    pub file: String,
    pub sha256: String,
    /// Wall-clock measurements are excluded from reproduction checks.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// The effective configuration, verbatim.
    pub config: String,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if manifest.manifest_version != MANIFEST_VERSION {
            return Err(CliError::Input(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                manifest.manifest_version
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// Collects output files of one command run.
#[derive(Debug)]
pub struct Outputs {
    dir: PathBuf,
    entries: Vec<(String, bool)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.entries.push((name.to_string(), true));
        Ok(path)
    }

    /// Registers a file written by other code.
    pub fn register(&mut self, name: &str, deterministic: bool) {
        self.entries.push((name.to_string(), deterministic));
    }

    pub fn write_timing(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.write(name, contents)?;
        self.entries.last_mut().expect("just pushed").1 = false;
        Ok(path)
    }

    pub fn finish(self) -> Result<Vec<OutputEntry>, CliError> {
        self.entries
            .into_iter()
            .map(|(file, deterministic)| {
                Ok(OutputEntry {
                    sha256: sha256_file(&self.dir.join(&file))?,
                    file,
                    deterministic,
                })
            })
            .collect()
    }
}
