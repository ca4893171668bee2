//! Training loop with gradient accumulation, per-epoch dev evaluation and
//! early stopping on dev joint RMSE.
//!
//! Randomness comes from three streams of the run seed (`Init`, `Shuffle`,
//! `Dropout`), and every reduction runs in a fixed order, so a run is a
//! pure function of its config, seed and data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Prediction};
use crate::error::{Error, Result};
use crate::features::{encode_pair, FeaturizerConfig};
use crate::metrics::{MetricsReport, SigmaEntry};
use crate::model::{backward, forward, init_params, DropoutMask, LabeledFeatures, LossMode, Model, ModelConfig, ModelParams};
use crate::optimizer::{clip_gradients, step, OptimizerConfig, OptimizerState, SchedulePosition};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub featurizer: FeaturizerConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            accumulation_steps: 4,
            max_epochs: 25,
            patience: 3,
            seed: 42,
            model: ModelConfig::default(),
            featurizer: FeaturizerConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults adjusted for training the small hashed-embedding encoder from
    /// scratch on a few thousand instances: a higher model learning rate and
    /// no gradient accumulation. Everything else keeps the defaults.
    pub fn desk_scale() -> Self {
        let mut cfg = TrainConfig {
            accumulation_steps: 1,
            ..Default::default()
        };
        cfg.optimizer.model_lr = 1e-2;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("accumulation_steps", self.accumulation_steps),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be >= 1")));
            }
        }
        self.model.validate()?;
        self.featurizer.validate()?;
        self.optimizer.validate()
    }

    pub fn loss_mode(&self) -> LossMode {
        self.model.loss_mode
    }

    /// Optimizer updates per epoch for `n` training instances.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size * self.accumulation_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based stopping. Ties do not count as improvement, so the
/// earliest epoch reaching the minimum is kept.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if metric >= best || metric.is_nan() => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, metric));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    pub epoch: usize,
    pub logvar_v: f64,
    pub logvar_a: f64,
    pub sigma2_v: f64,
    pub sigma2_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub seed: u64,
    pub config: TrainConfig,
    /// Parameters from the epoch with the lowest dev joint RMSE.
    pub best: Model,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub sigma_trajectory: Vec<SigmaPoint>,
}

impl RunArtifacts {
    pub fn best_dev(&self) -> &MetricsReport {
        &self.history[self.best_epoch - 1].dev
    }

    pub fn sigma_entry(&self, label: impl Into<String>) -> SigmaEntry {
        SigmaEntry {
            label: label.into(),
            seed: self.seed,
            loss_mode: self.config.loss_mode(),
            logvar_v: self.best.params.logvar_v,
            logvar_a: self.best.params.logvar_a,
        }
    }
}

pub fn featurize(ds: &Dataset, cfg: &FeaturizerConfig) -> Result<Vec<LabeledFeatures>> {
    ds.instances
        .iter()
        .map(|inst| {
            let (valence, arousal) = inst.labels().ok_or_else(|| {
                Error::invalid(format!("dataset {}: instance {} is unlabeled", ds.name, inst.id))
            })?;
            Ok(LabeledFeatures {
                features: encode_pair(&inst.text, &inst.aspect, cfg),
                valence,
                arousal,
            })
        })
        .collect()
}

fn predict_features(params: &ModelParams, data: &[LabeledFeatures]) -> Result<Vec<(f64, f64)>> {
    data.iter()
        .map(|ex| forward(params, &ex.features, None).map(|f| (f.y_v, f.y_a)))
        .collect()
}

fn evaluate_features(params: &ModelParams, data: &[LabeledFeatures]) -> Result<MetricsReport> {
    let preds = predict_features(params, data)?;
    let golds: Vec<(f64, f64)> = data.iter().map(|ex| (ex.valence, ex.arousal)).collect();
    MetricsReport::compute(&preds, &golds)
}

/// Eval-mode metrics on a labeled dataset.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<MetricsReport> {
    evaluate_features(&model.params, &featurize(ds, &model.featurizer)?)
}

/// Eval-mode raw predictions in dataset order; labels are ignored.
pub fn predict(model: &Model, ds: &Dataset) -> Result<Vec<Prediction>> {
    ds.instances
        .iter()
        .map(|inst| {
            let (valence, arousal) = model.predict(&inst.text, &inst.aspect)?;
            Ok(Prediction {
                id: inst.id.clone(),
                valence,
                arousal,
            })
        })
        .collect()
}

fn with_step(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} (epoch {epoch}, optimizer step {step})")),
        other => other,
    }
}

pub fn train(cfg: &TrainConfig, train_ds: &Dataset, dev_ds: &Dataset) -> Result<RunArtifacts> {
    cfg.validate()?;
    if train_ds.is_empty() || dev_ds.is_empty() {
        return Err(Error::invalid("train and dev sets must be nonempty"));
    }
    let train_data = featurize(train_ds, &cfg.featurizer)?;
    let dev_data = featurize(dev_ds, &cfg.featurizer)?;

    let mode = cfg.loss_mode();
    let mut params = init_params(&cfg.model, &cfg.featurizer, cfg.seed);
    let mut opt = OptimizerState::new(&params);
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout);

    let total_steps = (cfg.steps_per_epoch(train_data.len()) * cfg.max_epochs) as u64;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut history = Vec::new();
    let mut sigma_trajectory = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut updates = 0usize;

        for group in order.chunks(cfg.batch_size * cfg.accumulation_steps) {
            let pos = SchedulePosition {
                step: opt.step + 1,
                total_steps,
            };
            let mut grads = params.zeros_like();
            let mut micro_loss = 0.0;
            let micro_batches = group.chunks(cfg.batch_size);
            let k = micro_batches.len();
            for micro in micro_batches {
                let batch: Vec<LabeledFeatures> = micro.iter().map(|&i| train_data[i].clone()).collect();
                let masks: Option<Vec<DropoutMask>> = (cfg.model.dropout > 0.0).then(|| {
                    (0..batch.len())
                        .map(|_| DropoutMask::sample(&mut dropout_rng, cfg.model.hidden_dim, cfg.model.dropout))
                        .collect()
                });
                let bw = backward(&params, &batch, mode, masks.as_deref()).map_err(|e| with_step(e, epoch, pos.step))?;
                if !bw.loss.is_finite() {
                    return Err(with_step(Error::NonFinite(format!("training loss {}", bw.loss)), epoch, pos.step));
                }
                micro_loss += bw.loss;
                grads.add_assign(&bw.grads);
            }
            grads.scale(1.0 / k as f64);
            clip_gradients(&mut grads, cfg.optimizer.clip_norm).map_err(|e| with_step(e, epoch, pos.step))?;
            step(&mut opt, &mut params, &grads, &cfg.optimizer, pos)?;
            if !params.all_finite() {
                return Err(with_step(Error::NonFinite("parameters after update".into()), epoch, pos.step));
            }
            loss_sum += micro_loss / k as f64;
            updates += 1;
        }

        let dev = evaluate_features(&params, &dev_data)?;
        if !dev.joint_rmse.is_finite() {
            return Err(with_step(Error::NonFinite("dev RMSE".into()), epoch, opt.step));
        }
        let decision = stopper.observe(epoch, dev.joint_rmse);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / updates as f64,
            dev,
        });
        let (sigma2_v, sigma2_a) = params.sigma2();
        sigma_trajectory.push(SigmaPoint {
            epoch,
            logvar_v: params.logvar_v,
            logvar_a: params.logvar_a,
            sigma2_v,
            sigma2_a,
        });
        match decision {
            StopDecision::Improved => best.clone_from(&params),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let (best_epoch, _) = stopper.best().expect("at least one epoch ran");
    Ok(RunArtifacts {
        seed: cfg.seed,
        config: cfg.clone(),
        best: Model::new(cfg.model.clone(), cfg.featurizer.clone(), best)?,
        best_epoch,
        stopped_epoch: history.len(),
        history,
        sigma_trajectory,
    })
}

/// Independent runs that differ only in seed, returned in `seeds` order.
/// Runs execute in parallel; each owns all of its state.
pub fn run_seeds(template: &TrainConfig, seeds: &[u64], train_ds: &Dataset, dev_ds: &Dataset) -> Result<Vec<RunArtifacts>> {
    if seeds.is_empty() {
        return Err(Error::invalid("seed list is empty"));
    }
    for (i, s) in seeds.iter().enumerate() {
        if seeds[..i].contains(s) {
            return Err(Error::invalid(format!("duplicate seed {s}")));
        }
    }
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                seed,
                ..template.clone()
            };
            train(&cfg, train_ds, dev_ds)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_sequence() {
        let mut es = EarlyStopping::new(3);
        let seq = [1.0, 0.9, 0.95, 0.96, 0.97, 0.5];
        let mut stopped_at = None;
        for (i, &m) in seq.iter().enumerate() {
            if es.observe(i + 1, m) == StopDecision::Stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(es.best(), Some((2, 0.9)));
    }

    #[test]
    fn ties_keep_earlier_epoch() {
        let mut es = EarlyStopping::new(5);
        es.observe(1, 0.8);
        assert_eq!(es.observe(2, 0.8), StopDecision::Continue);
        assert_eq!(es.best(), Some((1, 0.8)));
    }

    #[test]
    fn steps_per_epoch_rounds_up() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.steps_per_epoch(64), 1);
        assert_eq!(cfg.steps_per_epoch(65), 2);
        assert_eq!(cfg.steps_per_epoch(4000), 63);
    }

    #[test]
    fn rejects_zero_sizes() {
        let cfg = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
