//! Run configuration: a TOML document with `[projection]`, `[model]`,
//! `[train]` and `[data]` tables, optionally layered over a named preset.

use std::fs;
use std::path::{Path, PathBuf};

use pnlp_core::{HeadKind, ModelConfig, ProjectionConfig, ProjectionKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const PRESETS: [&str; 5] = ["x-small", "small", "base", "large", "x-large"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub projection: ProjectionConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub bottleneck: usize,
    pub hidden: usize,
    pub depth: usize,
    /// Label count here is what `params` reports; training sizes the head
    /// from the training split's label inventory.
    pub head: HeadKind,
    /// Optional restatement of `(2w + 1) * m`, checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_rows: Option<usize>,
    /// Optional restatement of `projection.max_seq_len`, checked when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(default = "default_hash_width")]
    pub hash_width: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn default_hash_width() -> u32 {
    64
}

impl Default for DataPaths {
    fn default() -> Self {
        Self { vocab: None, cache: None, hash_width: default_hash_width(), train: None, val: None, test: None, out: None }
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Option<Self> {
        let (m, w, b, depth) = match name {
            "x-small" => (1024, 0, 64, 2),
            "small" => (1024, 0, 256, 2),
            "base" => (1024, 1, 256, 2),
            "large" => (2048, 1, 256, 4),
            "x-large" => (2048, 1, 512, 4),
            _ => return None,
        };
        Some(Self {
            projection: ProjectionConfig {
                kind: ProjectionKind::MinHash,
                n_hashes: 64,
                feature_size: m,
                window: w,
                max_seq_len: 64,
                simhash_bits: 64,
            },
            model: ModelSection {
                bottleneck: b,
                hidden: 256,
                depth,
                head: HeadKind::TokenLabels { num_labels: 78 },
                input_rows: None,
                seq_len: None,
            },
            train: TrainConfig::default(),
            data: DataPaths::default(),
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_rows: self.projection.input_rows(),
            seq_len: self.projection.max_seq_len,
            bottleneck: self.model.bottleneck,
            hidden: self.model.hidden,
            depth: self.model.depth,
            head: self.model.head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.projection.validate()?;
        let rows = self.projection.input_rows();
        if let Some(declared) = self.model.input_rows {
            if declared != rows {
                return Err(CliError::Usage(format!("model.input_rows = {declared} but (2 * window + 1) * token width = {rows}")));
            }
        }
        if let Some(declared) = self.model.seq_len {
            if declared != self.projection.max_seq_len {
                return Err(CliError::Usage(format!(
                    "model.seq_len = {declared} but projection.max_seq_len = {}",
                    self.projection.max_seq_len
                )));
            }
        }
        self.model_config().validate()?;
        self.train.validate()?;
        let metric = pnlp_core::Metric::for_head(self.model.head);
        if self.train.select_best_by != metric {
            return Err(CliError::Usage(format!(
                "train.select_best_by is {:?} but the model head calls for {metric:?}",
                self.train.select_best_by
            )));
        }
        if !matches!(self.data.hash_width, 32 | 64) {
            return Err(CliError::Usage(format!("data.hash_width must be 32 or 64, got {}", self.data.hash_width)));
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let base = match table.remove("preset") {
            None => toml::Table::new(),
            Some(toml::Value::String(name)) => {
                let preset = Self::preset(&name)
                    .ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`; expected one of {}", PRESETS.join(", "))))?;
                toml::Table::try_from(&preset).map_err(|e| CliError::Usage(e.to_string()))?
            }
            Some(other) => return Err(CliError::Usage(format!("preset must be a string, got {other}"))),
        };
        let merged = merge(base, table);
        let mut cfg: Self = merged.try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        if let Some(dir) = base_dir {
            cfg.data.resolve(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, path.parent()).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Data(e.to_string()))
    }
}

impl DataPaths {
    fn resolve(&mut self, dir: &Path) {
        for p in [&mut self.vocab, &mut self.cache, &mut self.train, &mut self.val, &mut self.test, &mut self.out].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (key, value) in over {
        match (base.remove(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(key, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
    base
}
