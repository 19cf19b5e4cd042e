//! Run configuration: a TOML file whose sections map onto the library
//! configs, plus `section.key=value` overrides from the command line.
//!
//! ```toml
//! [data]
//! source = "synthetic"        # or "file"
//! splits = { train = 0.6, valid = 0.2, test = 0.2 }
//! [data.synthetic]            # used when source = "synthetic"
//! w = 64
//! windows_per_cell = 20
//! [data.file]                 # used when source = "file"
//! path = "series.bin"
//! layout = "binary"
//! window = 64
//! stride = 64
//! split_axis = "samples"
//! [model]                     # encoder
//! [train]                     # optimizer and losses, [train.loss] for weights
//! [probe]                     # lambda grid
//! [eval]
//! horizon = 1
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use most_core::probes::ProbeConfig;
use most_core::trainer::TrainConfig;
use most_core::ttsdata::{DatasetSpec, Splits, SyntheticSpec};
use most_core::MostConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, PathContext, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    #[default]
    Synthetic,
    File,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticSpec,
    /// Sample splits for synthetic data; file data carries its own.
    pub splits: Splits,
    pub file: Option<DatasetSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Forecast length for the ridge probe and the supervised objectives.
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { horizon: 1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: MostConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Sets the model, training and synthetic-data seeds together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.synthetic.seed = seed;
        self
    }

    pub fn dataset_name(&self) -> String {
        match (self.data.source, &self.data.file) {
            (DataSource::File, Some(spec)) => spec
                .path
                .file_stem()
                .map_or_else(|| "file".to_string(), |s| s.to_string_lossy().into_owned()),
            _ => "synthetic".to_string(),
        }
    }

    /// Files the run reads, for the manifest hash.
    pub fn input_files(&self) -> Vec<PathBuf> {
        match (self.data.source, &self.data.file) {
            (DataSource::File, Some(spec)) => std::iter::once(spec.path.clone()).chain(spec.labels.clone()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.probe.validate()?;
        if self.eval.horizon == 0 {
            return Err(CliError::Config("eval.horizon must be >= 1".into()));
        }
        if self.data.source == DataSource::File && self.data.file.is_none() {
            return Err(CliError::Config("data.source = \"file\" needs a [data.file] section".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal
/// and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key '{key}'")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{key}': '{p}' is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads a config file (or a run manifest, whose `[config]` table is used),
/// applies overrides and the seed, and validates. Relative data paths are
/// resolved against the file's directory.
pub fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).at(p)?;
            let mut t: toml::Table = text.parse().at(p)?;
            if t.contains_key("run") {
                match t.remove("config") {
                    Some(toml::Value::Table(c)) => t = c,
                    _ => return Err(CliError::Config(format!("{}: manifest has no [config] table", p.display()))),
                }
            }
            t
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table).try_into()?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    if let (Some(base), Some(spec)) = (path.and_then(Path::parent), cfg.data.file.as_mut()) {
        if spec.path.is_relative() {
            spec.path = base.join(&spec.path);
        }
        if let Some(l) = spec.labels.as_mut().filter(|l| l.is_relative()) {
            *l = base.join(&*l);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
