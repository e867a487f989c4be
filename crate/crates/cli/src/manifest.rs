//! Per-stage manifests: config, seeds, and SHA-256 of every input and output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let data = std::fs::read(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
        Ok(Self {
            path: path.to_string_lossy().into_owned(),
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seeds: BTreeMap<String, u64>,
    /// The config sections this stage read.
    pub config: BTreeMap<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Collects what a stage read and wrote, then hashes it all at the end.
#[derive(Debug)]
pub struct ManifestBuilder {
    stage: String,
    seeds: BTreeMap<String, u64>,
    config: BTreeMap<String, serde_json::Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            seeds: BTreeMap::new(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn section<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<&mut Self> {
        let v = serde_json::to_value(value).map_err(vaediff::Error::from)?;
        self.config.insert(name.to_string(), v);
        Ok(self)
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn finish(&self) -> CliResult<Manifest> {
        let digest = |paths: &[PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<CliResult<Vec<_>>>();
        let mut outputs = digest(&self.outputs)?;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            stage: self.stage.clone(),
            seeds: self.seeds.clone(),
            config: self.config.clone(),
            inputs: digest(&self.inputs)?,
            outputs,
        })
    }

    /// Hashes everything and writes `<dir>/<stage>.json`.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let m = self.finish()?;
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.to_path_buf(), e))?;
        let path = dir.join(format!("{}.json", self.stage));
        let mut text = serde_json::to_string_pretty(&m).map_err(vaediff::Error::from)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(path.clone(), e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_strings() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
