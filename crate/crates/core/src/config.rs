//! Run configuration: JSON file plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ansatz::AnsatzSpec;
use crate::downstream::DownstreamConfig;
use crate::error::{Error, Result};
use crate::sculpture::MetaConfig;

/// Where meta-training inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaDataSource {
    /// Standardized training rows of the diabetes data.
    #[default]
    Dataset,
    /// Standard-normal vectors, for runs without the dataset.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// Generator checkpoint; defaults to `<out_dir>/sculpture.ckpt.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/diabetes.csv"),
            out_dir: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Seed of the train/test split, shared by every command.
    pub split_seed: u64,
    pub ansatz: AnsatzSpec,
    pub meta: MetaConfig,
    pub meta_data: MetaDataSource,
    /// Number of vectors drawn when `meta_data` is synthetic.
    pub synthetic_samples: usize,
    pub downstream: DownstreamConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split_seed: 0,
            ansatz: AnsatzSpec::default(),
            meta: MetaConfig::default(),
            meta_data: MetaDataSource::default(),
            synthetic_samples: 512,
            downstream: DownstreamConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `a.b.c=value` overrides in order. Values are read as JSON and
    /// fall back to plain strings, so `paths.dataset=x.csv` needs no quotes.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut tree = serde_json::to_value(&self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key.trim(), value)?;
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.ansatz
            .validate()
            .map_err(|e| Error::Config(format!("ansatz: {e}")))?;
        let m = &self.meta;
        let positive = [
            ("meta.hidden_dim", m.hidden_dim as f64),
            ("meta.batch_size", m.batch_size as f64),
            ("meta.init_sigma", m.init_sigma),
            ("meta.fd_step", m.fd_step),
            ("meta.optimizer.lr", m.optimizer.lr),
            ("meta.thresholds.filter_floor", m.thresholds.filter_floor),
            ("meta.thresholds.degeneracy_threshold", m.thresholds.degeneracy_threshold),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if m.optimizer.weight_decay < 0.0 {
            return Err(Error::Config("meta.optimizer.weight_decay must be ≥ 0".into()));
        }
        if self.meta_data == MetaDataSource::Synthetic && self.synthetic_samples == 0 {
            return Err(Error::Config("synthetic_samples must be positive".into()));
        }
        if !(self.downstream.optimizer.lr > 0.0) {
            return Err(Error::Config("downstream.optimizer.lr must be positive".into()));
        }
        self.downstream.validate()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("sculpture.ckpt.json"))
    }

    /// Compact JSON with fields in declaration order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let slot = obj.get_mut(*part).expect("checked");
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(Error::Config("empty override key".into()))
}
