//! Experiment config file (TOML).
//!
//! ```toml
//! seeds = [42, 12, 73]
//!
//! [paths]
//! train = "train.jsonl"
//! dev = "dev.jsonl"
//! test = "test.jsonl"      # optional, unlabeled is fine
//! output_dir = "runs"
//!
//! [report]
//! label = "synthetic"      # defaults to the config file stem
//!
//! [train]                  # any TrainConfig field; omitted fields take defaults
//! accumulation_steps = 1
//! [train.optimizer]
//! model_lr = 1e-2
//! ```
//!
//! Relative paths resolve against the config file's directory. `train.seed`
//! is ignored; runs use the `seeds` list.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::hash_token;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportOptions {
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub paths: Paths,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.paths.train);
        resolve(&mut cfg.paths.dev);
        resolve(&mut cfg.paths.output_dir);
        if let Some(t) = cfg.paths.test.as_mut() {
            resolve(t);
        }
        if cfg.report.label.is_none() {
            cfg.report.label = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("duplicate seed {s}")));
            }
        }
        let inputs = [Some(&self.paths.train), Some(&self.paths.dev), self.paths.test.as_ref()];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        self.train.validate()
    }

    pub fn label(&self) -> &str {
        self.report.label.as_deref().unwrap_or("experiment")
    }

    /// Identifies the training setup: every train setting except the seed,
    /// plus the contents of the train and dev files.
    pub fn config_hash(&self) -> Result<String> {
        let mut train = self.train.clone();
        train.seed = 0;
        let canonical = serde_json::to_string(&train).map_err(|e| Error::Config(e.to_string()))?;
        let train_fp = file_fingerprint(&self.paths.train)?;
        let dev_fp = file_fingerprint(&self.paths.dev)?;
        Ok(format!("{:016x}", hash_token(&format!("{canonical}|{train_fp}|{dev_fp}"), 0)))
    }
}

pub fn file_fingerprint(path: &Path) -> Result<String> {
    let body = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:016x}", hash_token(&String::from_utf8_lossy(&body), 0)))
}
