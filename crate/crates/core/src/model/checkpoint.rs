//! Plain-text checkpoint container.
//!
//! ```text
//! vareg-checkpoint 1
//! hash <featurizer hash descriptor>
//! model <ModelConfig as JSON>
//! featurizer <FeaturizerConfig as JSON>
//! block <name> <rows> <cols>
//! <cols space-separated f64 values>      (repeated rows times)
//! ...
//! end
//! ```
//!
//! Values use Rust's shortest round-trip decimal form, so a save/load cycle
//! is bit-exact and saving is byte-deterministic.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::features::{hash_descriptor, FeaturizerConfig};
use crate::fsutil::atomic_write;

const MAGIC: &str = "vareg-checkpoint 1";

fn block_shape(p: &ModelParams, name: &str, len: usize) -> (usize, usize) {
    match name {
        "embedding" => (p.bucket_count, p.embed_dim),
        "hidden_w" => (2 * p.embed_dim, p.hidden_dim),
        _ => (1, len),
    }
}

pub fn write_model(model: &Model) -> String {
    let mut out = String::new();
    let p = &model.params;
    // JSON encoding of these plain structs cannot fail.
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "hash {}", hash_descriptor());
    let _ = writeln!(out, "model {}", serde_json::to_string(&model.config).unwrap());
    let _ = writeln!(out, "featurizer {}", serde_json::to_string(&model.featurizer).unwrap());
    for block in p.blocks() {
        let (rows, cols) = block_shape(p, block.name, block.values.len());
        let _ = writeln!(out, "block {} {rows} {cols}", block.name);
        for row in block.values.chunks(cols.max(1)) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    atomic_write(path, write_model(model).as_bytes())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&body).map_err(|(line, message)| Error::Record {
        path: path.to_path_buf(),
        line,
        message,
    })
}

type ParseResult<T> = std::result::Result<T, (usize, String)>;

fn parse_model(body: &str) -> ParseResult<Model> {
    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| lines.next().ok_or((0, format!("unexpected end of file, expected {what}")));

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err((n, format!("expected {MAGIC:?}")));
    }
    let (n, hash) = next("hash line")?;
    if hash.strip_prefix("hash ") != Some(hash_descriptor().as_str()) {
        return Err((n, "featurizer hash descriptor does not match this build".into()));
    }
    let (n, line) = next("model config")?;
    let config: ModelConfig = line
        .strip_prefix("model ")
        .ok_or((n, "expected model config".to_string()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| (n, e.to_string())))?;
    let (n, line) = next("featurizer config")?;
    let featurizer: FeaturizerConfig = line
        .strip_prefix("featurizer ")
        .ok_or((n, "expected featurizer config".to_string()))
        .and_then(|j| serde_json::from_str(j).map_err(|e| (n, e.to_string())))?;
    config.validate().map_err(|e| (n, e.to_string()))?;
    featurizer.validate().map_err(|e| (n, e.to_string()))?;

    let mut params = ModelParams::zeros(featurizer.bucket_count, config.embed_dim, config.hidden_dim);
    let shapes: Vec<(&'static str, usize, usize)> = params
        .blocks()
        .iter()
        .map(|b| {
            let (r, c) = block_shape(&params, b.name, b.values.len());
            (b.name, r, c)
        })
        .collect();

    for (block, (name, rows, cols)) in params.blocks_mut().into_iter().zip(shapes) {
        let (n, header) = next("block header")?;
        let want = format!("block {name} {rows} {cols}");
        if header != want {
            return Err((n, format!("expected {want:?}, found {header:?}")));
        }
        for r in 0..rows {
            let (n, line) = next("block row")?;
            let dst = &mut block.values[r * cols..(r + 1) * cols];
            let mut count = 0;
            for (slot, tok) in dst.iter_mut().zip(line.split(' ')) {
                *slot = tok.parse().map_err(|_| (n, format!("bad number {tok:?}")))?;
                if !slot.is_finite() {
                    return Err((n, format!("non-finite value in {name}")));
                }
                count += 1;
            }
            if count != cols || line.split(' ').count() != cols {
                return Err((n, format!("expected {cols} values in {name}")));
            }
        }
    }
    let (n, end) = next("end marker")?;
    if end != "end" {
        return Err((n, "expected end marker".into()));
    }
    Model::new(config, featurizer, params).map_err(|e| (0, e.to_string()))
}
