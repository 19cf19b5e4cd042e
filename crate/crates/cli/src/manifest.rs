//! Run directories and their manifests.
//!
//! Every command creates `<out>/<timestamp>-<hash>/` with
//! `manifest.toml`, `checkpoints/`, `reps/`, `reports/` and `data/`. The
//! hash covers the command, the resolved config and the content of every
//! input file, so identical inputs give identical hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{PathContext, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub seed: u64,
    pub input_hash: String,
    pub created: String,
    pub tool_version: String,
    pub inputs: Vec<InputRecord>,
    pub layout: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: RunInfo,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        toml::from_str(&text).at(path)
    }
}

pub const SUBDIRS: [&str; 4] = ["checkpoints", "reps", "reports", "data"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reps(&self) -> PathBuf {
        self.root.join("reps")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
}

/// Content hash in the style of a git blob id, over SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn input_hash(command: &str, config_toml: &str, inputs: &[InputRecord]) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(config_toml.as_bytes());
    for i in inputs {
        h.update([0]);
        h.update(i.sha256.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Creates a fresh run directory and writes its manifest. `extra_inputs`
/// are files named on the command line, such as checkpoints.
pub fn create_run(out: &Path, command: &str, config: &RunConfig, extra_inputs: &[&Path]) -> Result<(RunDir, RunManifest)> {
    let mut inputs = Vec::new();
    for p in config.input_files().iter().map(PathBuf::as_path).chain(extra_inputs.iter().copied()) {
        let bytes = fs::read(p).at(p)?;
        inputs.push(InputRecord {
            path: p.display().to_string(),
            sha256: blob_hash(&bytes),
        });
    }
    let config_toml = config.to_toml()?;
    let hash = input_hash(command, &config_toml, &inputs);
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();

    fs::create_dir_all(out).at(out)?;
    let base = format!("{stamp}-{}", &hash[..12]);
    let mut root = out.join(&base);
    let mut k = 1;
    while root.exists() {
        root = out.join(format!("{base}-{k}"));
        k += 1;
    }
    for sub in SUBDIRS {
        fs::create_dir_all(root.join(sub)).at(&root)?;
    }
    let manifest = RunManifest {
        run: RunInfo {
            command: command.to_string(),
            seed: config.train.seed,
            input_hash: hash,
            created: stamp,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs,
            layout: SUBDIRS.iter().map(|s| format!("{s}/")).collect(),
        },
        config: config.clone(),
    };
    let dir = RunDir { root };
    fs::write(dir.manifest(), toml::to_string(&manifest)?).at(&dir.manifest())?;
    Ok((dir, manifest))
}
