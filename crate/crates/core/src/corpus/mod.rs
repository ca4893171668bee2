//! Datasets of text/aspect pairs with optional valence/arousal gold labels.
//!
//! Records are stored one JSON object per line:
//!
//! ```text
//! {"id":"x1","text":"A new Nigeria is coming guys.","aspect":"Nigeria","valence":7.23,"arousal":4.57}
//! ```
//!
//! `aspect`, `valence` and `arousal` may be omitted. A missing aspect loads
//! as the literal `NULL`; labels must be given together or not at all.

mod synthetic;
mod wire;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::rng::{stream_rng, Stream};

pub use synthetic::{generate_synthetic, SynthSpec};
pub use wire::{format_va, parse_va, read_predictions, write_predictions, Prediction};

pub const LABEL_MIN: f64 = 1.0;
pub const LABEL_MAX: f64 = 9.0;
pub const NULL_ASPECT: &str = "NULL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    #[serde(default = "null_aspect", deserialize_with = "aspect_or_null")]
    pub aspect: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f64>,
}

fn null_aspect() -> String {
    NULL_ASPECT.to_string()
}

fn aspect_or_null<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(Option::<String>::deserialize(d)?.unwrap_or_else(null_aspect))
}

impl Instance {
    /// Both gold labels, if present.
    pub fn labels(&self) -> Option<(f64, f64)> {
        Some((self.valence?, self.arousal?))
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.is_empty() {
            return Err(format!("instance {}: empty text", self.id));
        }
        match (self.valence, self.arousal) {
            (None, None) => Ok(()),
            (Some(v), Some(a)) => {
                for (name, x) in [("valence", v), ("arousal", a)] {
                    if !(LABEL_MIN..=LABEL_MAX).contains(&x) {
                        return Err(format!(
                            "instance {}: {name} {x} outside [{LABEL_MIN}, {LABEL_MAX}]",
                            self.id
                        ));
                    }
                }
                Ok(())
            }
            _ => Err(format!(
                "instance {}: valence and arousal must be given together",
                self.id
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub instances: Vec<Instance>,
}

impl Dataset {
    /// Builds a dataset, checking per-instance invariants and id uniqueness.
    pub fn new(name: impl Into<String>, instances: Vec<Instance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            inst.check().map_err(Error::Invalid)?;
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::invalid(format!("duplicate id {:?}", inst.id)));
            }
        }
        Ok(Dataset {
            name: name.into(),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.instances.iter().all(|i| i.labels().is_some())
    }

    /// Gold (valence, arousal) pairs, or an error naming the first unlabeled id.
    pub fn gold(&self) -> Result<Vec<(f64, f64)>> {
        self.instances
            .iter()
            .map(|i| {
                i.labels().ok_or_else(|| {
                    Error::invalid(format!("dataset {}: instance {} is unlabeled", self.name, i.id))
                })
            })
            .collect()
    }
}

pub fn load_dataset(path: &Path, require_labels: bool) -> Result<Dataset> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record_err = |line: usize, message: String| Error::Record {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in body.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: Instance =
            serde_json::from_str(line).map_err(|e| record_err(lineno, format!("malformed record: {e}")))?;
        inst.check().map_err(|m| record_err(lineno, m))?;
        if require_labels && inst.labels().is_none() {
            return Err(record_err(lineno, format!("instance {}: missing labels", inst.id)));
        }
        if !seen.insert(inst.id.clone()) {
            return Err(record_err(lineno, format!("duplicate id {:?}", inst.id)));
        }
        instances.push(inst);
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset { name, instances })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::new();
    for inst in &ds.instances {
        // Serializing plain strings and f64s cannot fail.
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Seeded random partition into (train, dev). Each side keeps input order.
pub fn split_dataset(ds: &Dataset, dev_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::invalid(format!("dev fraction {dev_fraction} not in (0, 1)")));
    }
    let n = ds.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 instances to split"));
    }
    let n_dev = (dev_fraction * n as f64).round() as usize;
    if n_dev == 0 || n_dev == n {
        return Err(Error::invalid(format!(
            "dev fraction {dev_fraction} of {n} instances leaves an empty split"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split));
    let mut is_dev = vec![false; n];
    for &i in &order[..n_dev] {
        is_dev[i] = true;
    }

    let (mut train, mut dev) = (Vec::with_capacity(n - n_dev), Vec::with_capacity(n_dev));
    for (inst, dev_side) in ds.instances.iter().zip(is_dev) {
        if dev_side {
            dev.push(inst.clone());
        } else {
            train.push(inst.clone());
        }
    }
    Ok((
        Dataset {
            name: format!("{}-train", ds.name),
            instances: train,
        },
        Dataset {
            name: format!("{}-dev", ds.name),
            instances: dev,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub count: usize,
    pub mean_valence: f64,
    pub mean_arousal: f64,
    /// Population standard deviations.
    pub sd_valence: f64,
    pub sd_arousal: f64,
    /// Whitespace-token text lengths at quantiles 0, 0.25, 0.5, 0.75, 1 (nearest rank).
    pub text_length_quantiles: [usize; 5],
}

pub fn dataset_stats(ds: &Dataset) -> Result<DatasetStats> {
    let gold = ds.gold()?;
    if gold.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let n = gold.len() as f64;
    let mean = |f: fn(&(f64, f64)) -> f64| gold.iter().map(f).sum::<f64>() / n;
    let mean_v = mean(|p| p.0);
    let mean_a = mean(|p| p.1);
    let sd = |f: fn(&(f64, f64)) -> f64, m: f64| {
        (gold.iter().map(|p| (f(p) - m).powi(2)).sum::<f64>() / n).sqrt()
    };

    let mut lengths: Vec<usize> = ds
        .instances
        .iter()
        .map(|i| i.text.split_whitespace().count())
        .collect();
    lengths.sort_unstable();
    let q = |p: f64| {
        let rank = (p * lengths.len() as f64).ceil() as usize;
        lengths[rank.saturating_sub(1).min(lengths.len() - 1)]
    };

    Ok(DatasetStats {
        count: gold.len(),
        mean_valence: mean_v,
        mean_arousal: mean_a,
        sd_valence: sd(|p| p.0, mean_v),
        sd_arousal: sd(|p| p.1, mean_a),
        text_length_quantiles: [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)],
    })
}
