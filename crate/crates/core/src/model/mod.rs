//! Dual-head regressor over pooled hashed n-gram embeddings.
//!
//! ```text
//! z   = [mean E[text_indices] ; mean E[aspect_indices]]    (2 * embed_dim)
//! h   = dropout(tanh(W_h^T z + b_h))                        (hidden_dim)
//! y_V = w_V . h + b_V        y_A = w_A . h + b_A
//! ```
//!
//! The two task losses are combined either as a plain sum or weighted by the
//! learned log-variances `s = log sigma^2`, see [`loss`].

mod backward;
mod checkpoint;
mod gradcheck;
pub mod loss;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{encode_pair, FeatureIndices, FeaturizerConfig};
use crate::rng::{stream_rng, Stream};

pub use backward::{backward, forward, objective, Backward, DropoutMask, ForwardPass, LabeledFeatures};
pub use checkpoint::{load_model, save_model, write_model};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use loss::{fixed_loss, mse, uncertainty_loss, TaskLosses, UncertaintyLoss};

pub const INIT_WEIGHT_RANGE: f64 = 0.05;
pub const INIT_VARIANCE_RANGE: (f64, f64) = (0.2, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Precision-weighted sum with learned log-variances.
    Uncertainty,
    /// Unweighted `L_V + L_A`; the log-variances are inert.
    Fixed,
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Uncertainty => "uncertainty",
            LossMode::Fixed => "fixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub loss_mode: LossMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            dropout: 0.1,
            loss_mode: LossMode::Uncertainty,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model dims must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("model.dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrices and vectors; the only kind that receives weight decay.
    Weight,
    Bias,
    /// Log-variance scalars, optimized with their own learning rate.
    LogVar,
}

pub struct Block<'a> {
    pub name: &'static str,
    pub kind: ParamKind,
    pub values: &'a [f64],
}

pub struct BlockMut<'a> {
    pub name: &'static str,
    pub kind: ParamKind,
    pub values: &'a mut [f64],
}

/// All trainable values. Gradients and optimizer moments reuse this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub bucket_count: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// `bucket_count x embed_dim`, row-major.
    pub embedding: Vec<f64>,
    /// `(2 * embed_dim) x hidden_dim`, row-major.
    pub hidden_w: Vec<f64>,
    pub hidden_b: Vec<f64>,
    pub head_v_w: Vec<f64>,
    pub head_v_b: f64,
    pub head_a_w: Vec<f64>,
    pub head_a_b: f64,
    pub logvar_v: f64,
    pub logvar_a: f64,
}

impl ModelParams {
    pub fn zeros(bucket_count: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        ModelParams {
            bucket_count,
            embed_dim,
            hidden_dim,
            embedding: vec![0.0; bucket_count * embed_dim],
            hidden_w: vec![0.0; 2 * embed_dim * hidden_dim],
            hidden_b: vec![0.0; hidden_dim],
            head_v_w: vec![0.0; hidden_dim],
            head_v_b: 0.0,
            head_a_w: vec![0.0; hidden_dim],
            head_a_b: 0.0,
            logvar_v: 0.0,
            logvar_a: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.bucket_count, self.embed_dim, self.hidden_dim)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.bucket_count, self.embed_dim, self.hidden_dim)
            == (other.bucket_count, other.embed_dim, other.hidden_dim)
    }

    pub fn blocks(&self) -> [Block<'_>; 9] {
        use std::slice::from_ref;
        use ParamKind::*;
        [
            Block { name: "embedding", kind: Weight, values: &self.embedding },
            Block { name: "hidden_w", kind: Weight, values: &self.hidden_w },
            Block { name: "hidden_b", kind: Bias, values: &self.hidden_b },
            Block { name: "head_v_w", kind: Weight, values: &self.head_v_w },
            Block { name: "head_v_b", kind: Bias, values: from_ref(&self.head_v_b) },
            Block { name: "head_a_w", kind: Weight, values: &self.head_a_w },
            Block { name: "head_a_b", kind: Bias, values: from_ref(&self.head_a_b) },
            Block { name: "logvar_v", kind: LogVar, values: from_ref(&self.logvar_v) },
            Block { name: "logvar_a", kind: LogVar, values: from_ref(&self.logvar_a) },
        ]
    }

    pub fn blocks_mut(&mut self) -> [BlockMut<'_>; 9] {
        use std::slice::from_mut;
        use ParamKind::*;
        [
            BlockMut { name: "embedding", kind: Weight, values: &mut self.embedding },
            BlockMut { name: "hidden_w", kind: Weight, values: &mut self.hidden_w },
            BlockMut { name: "hidden_b", kind: Bias, values: &mut self.hidden_b },
            BlockMut { name: "head_v_w", kind: Weight, values: &mut self.head_v_w },
            BlockMut { name: "head_v_b", kind: Bias, values: from_mut(&mut self.head_v_b) },
            BlockMut { name: "head_a_w", kind: Weight, values: &mut self.head_a_w },
            BlockMut { name: "head_a_b", kind: Bias, values: from_mut(&mut self.head_a_b) },
            BlockMut { name: "logvar_v", kind: LogVar, values: from_mut(&mut self.logvar_v) },
            BlockMut { name: "logvar_a", kind: LogVar, values: from_mut(&mut self.logvar_a) },
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate `i` in block order.
    pub fn coord_mut(&mut self, mut i: usize) -> &mut f64 {
        for block in self.blocks_mut() {
            if i < block.values.len() {
                return &mut block.values[i];
            }
            i -= block.values.len();
        }
        panic!("coordinate out of range");
    }

    pub fn coord(&self, mut i: usize) -> f64 {
        for block in self.blocks() {
            if i < block.values.len() {
                return block.values[i];
            }
            i -= block.values.len();
        }
        panic!("coordinate out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.values.iter().all(|x| x.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.values.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.values.iter_mut().zip(src.values).for_each(|(d, s)| *d += s);
        }
    }

    /// `sigma^2 = exp(s)` per task.
    pub fn sigma2(&self) -> (f64, f64) {
        (self.logvar_v.exp(), self.logvar_a.exp())
    }
}

/// Seeded initialization: weights `U(-0.05, 0.05)`, biases zero and
/// `s = ln u` with `u ~ U(0.2, 1.0)` drawn separately per task, so the two
/// tasks start with different weights. The log-variances are drawn first
/// so they do not depend on the model dimensions.
pub fn init_params(model: &ModelConfig, featurizer: &FeaturizerConfig, seed: u64) -> ModelParams {
    let mut rng = stream_rng(seed, Stream::Init);
    let mut p = ModelParams::zeros(featurizer.bucket_count, model.embed_dim, model.hidden_dim);
    let (lo, hi) = INIT_VARIANCE_RANGE;
    p.logvar_v = rng.random_range(lo..hi).ln();
    p.logvar_a = rng.random_range(lo..hi).ln();
    for w in p
        .embedding
        .iter_mut()
        .chain(&mut p.hidden_w)
        .chain(&mut p.head_v_w)
        .chain(&mut p.head_a_w)
    {
        *w = rng.random_range(-INIT_WEIGHT_RANGE..INIT_WEIGHT_RANGE);
    }
    p
}

/// Parameters bundled with the configuration needed to featurize inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub featurizer: FeaturizerConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, featurizer: FeaturizerConfig, params: ModelParams) -> Result<Self> {
        if params.bucket_count != featurizer.bucket_count
            || params.embed_dim != config.embed_dim
            || params.hidden_dim != config.hidden_dim
        {
            return Err(Error::Shape("parameters do not match model/featurizer config".into()));
        }
        Ok(Model {
            config,
            featurizer,
            params,
        })
    }

    pub fn encode(&self, text: &str, aspect: &str) -> FeatureIndices {
        encode_pair(text, aspect, &self.featurizer)
    }

    /// Eval-mode (no dropout) raw prediction.
    pub fn predict(&self, text: &str, aspect: &str) -> Result<(f64, f64)> {
        let pass = forward(&self.params, &self.encode(text, aspect), None)?;
        Ok((pass.y_v, pass.y_a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_in_range() {
        let (m, f) = (ModelConfig::default(), FeaturizerConfig::default());
        let a = init_params(&m, &f, 42);
        assert_eq!(a, init_params(&m, &f, 42));
        assert_ne!(a, init_params(&m, &f, 43));
        assert!(a.embedding.iter().all(|w| w.abs() <= INIT_WEIGHT_RANGE));
        assert!(a.hidden_b.iter().all(|&b| b == 0.0));
        assert_eq!((a.head_v_b, a.head_a_b), (0.0, 0.0));
        for seed in 0..200 {
            let p = init_params(&m, &f, seed);
            for s in [p.logvar_v, p.logvar_a] {
                assert!((0.2f64.ln()..=0.0).contains(&s), "seed {seed}: {s}");
            }
        }
    }

    #[test]
    fn init_variance_is_uniform_ks() {
        // One-sample Kolmogorov-Smirnov against U(0.2, 1.0); critical value
        // at alpha = 0.01 for n = 1000 is 1.628 / sqrt(n).
        let (m, f) = (
            ModelConfig {
                embed_dim: 1,
                hidden_dim: 1,
                ..Default::default()
            },
            FeaturizerConfig {
                bucket_count: 2,
                ..Default::default()
            },
        );
        let n = 1000;
        let mut draws: Vec<f64> = (0..n as u64).map(|s| init_params(&m, &f, s).logvar_v.exp()).collect();
        draws.sort_by(f64::total_cmp);
        let cdf = |x: f64| ((x - 0.2) / 0.8).clamp(0.0, 1.0);
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - c)
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn init_log_variance_independent_of_dims() {
        let f = FeaturizerConfig::default();
        let small = ModelConfig {
            embed_dim: 4,
            hidden_dim: 3,
            ..Default::default()
        };
        let a = init_params(&small, &f, 9);
        let b = init_params(&ModelConfig::default(), &f, 9);
        assert_eq!((a.logvar_v, a.logvar_a), (b.logvar_v, b.logvar_a));
    }

    #[test]
    fn coords_walk_blocks() {
        let mut p = ModelParams::zeros(3, 2, 2);
        let n = p.len();
        assert_eq!(n, 6 + 8 + 2 + 2 + 1 + 2 + 1 + 2);
        *p.coord_mut(n - 1) = 1.5;
        assert_eq!(p.logvar_a, 1.5);
        *p.coord_mut(6) = -2.0;
        assert_eq!(p.hidden_w[0], -2.0);
        assert_eq!(p.coord(6), -2.0);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            hidden_dim: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
