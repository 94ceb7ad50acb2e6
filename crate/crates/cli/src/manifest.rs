//! Run manifests and atomic output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{Classify, CmdResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// File name inside the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<Artifact>,
    pub duration_seconds: f64,
}

/// Collects outputs of one command run into a directory.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    started: Instant,
    outputs: Vec<String>,
}

impl RunDir {
    /// `started` is when the command began, for the manifest's duration.
    pub fn create(dir: &Path, command: &str, started: Instant) -> CmdResult<Self> {
        fs::create_dir_all(dir).user(format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.into(),
            started,
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` via a temporary file and rename.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> CmdResult<()> {
        write_atomic(&self.path(name), contents)?;
        self.outputs.push(name.into());
        Ok(())
    }

    /// Records a file that was written directly.
    pub fn register(&mut self, name: &str) {
        self.outputs.push(name.into());
    }

    pub fn finish(
        self,
        seed: Option<u64>,
        config: BTreeMap<String, String>,
        inputs: &[&Path],
    ) -> CmdResult<RunManifest> {
        let outputs = self
            .outputs
            .iter()
            .map(|name| {
                let bytes = fs::read(self.path(name)).internal(format!("cannot re-read {name}"))?;
                Ok(Artifact {
                    path: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<CmdResult<_>>()?;
        let manifest = RunManifest {
            command: self.command,
            seed,
            config,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).internal("cannot encode manifest")?;
        text.push('\n');
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(manifest)
    }
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> CmdResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).user(format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).user(format!("cannot move {} into place", path.display()))
}

/// Parses `key = value` lines into a map for the manifest.
pub fn config_map(key_values: &str) -> BTreeMap<String, String> {
    key_values
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}
