use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{read_file, write_file, CliError};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Record of one run: resolved configuration, statistics, timings and the
/// hash of every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub angles: Vec<Value>,
    pub mesh: Value,
    pub convergence: Value,
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Manifest {
            tool: "conelayer".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            angles: Vec::new(),
            mesh: Value::Null,
            convergence: Value::Null,
            timings: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_file(&dir.join(name), bytes)?;
        self.files.push(FileEntry { name: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)?;
        write_file(&dir.join("manifest.json"), text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Ok(serde_json::from_str(&read_file(path)?)?)
    }

    /// Files whose current content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| std::fs::read(dir.join(&f.name)).map_or(true, |b| sha256_hex(&b) != f.sha256))
            .map(|f| f.name.clone())
            .collect()
    }
}
