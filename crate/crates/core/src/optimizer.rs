//! AdamW over two parameter groups.
//!
//! The model group (embedding, hidden layer, heads) and the log-variance
//! group have separate peak learning rates but share the warmup shape.
//! Decoupled weight decay applies to weight tensors only, never to biases
//! or to the log-variances, which must stay free to settle at `exp(s) = L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub model_lr: f64,
    pub sigma_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    /// Apply the warmup ramp to the log-variance group as well.
    pub sigma_warmup: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            model_lr: 2e-5,
            sigma_lr: 5e-2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_fraction: 0.10,
            clip_norm: 1.0,
            sigma_warmup: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("optimizer.{name} must be > 0, got {x}")))
            }
        };
        pos("model_lr", self.model_lr)?;
        pos("sigma_lr", self.sigma_lr)?;
        pos("clip_norm", self.clip_norm)?;
        pos("eps", self.eps)?;
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "optimizer.warmup_fraction {} not in [0, 1)",
                self.warmup_fraction
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("optimizer.weight_decay must be >= 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("optimizer.{name} {b} not in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Linear ramp from 0 to `peak_lr` over `ceil(warmup_fraction * total_steps)`
/// steps, then constant.
pub fn lr_at(step: u64, total_steps: u64, peak_lr: f64, warmup_fraction: f64) -> f64 {
    let warmup = (warmup_fraction * total_steps as f64).ceil() as u64;
    if warmup == 0 || step >= warmup {
        peak_lr
    } else {
        peak_lr * step as f64 / warmup as f64
    }
}

/// Scales `grads` in place so the joint L2 norm over both groups is at most
/// `clip_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut ModelParams, clip_norm: f64) -> Result<f64> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let norm = grads.sq_norm().sqrt();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulePosition {
    /// 1-based index of the update being applied.
    pub step: u64,
    pub total_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub last_model_lr: f64,
    pub last_sigma_lr: f64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            last_model_lr: 0.0,
            last_sigma_lr: 0.0,
        }
    }

    /// Next schedule position for a run of `total_steps` updates.
    pub fn next_position(&self, total_steps: u64) -> SchedulePosition {
        SchedulePosition {
            step: self.step + 1,
            total_steps,
        }
    }
}

pub fn step(
    state: &mut OptimizerState,
    params: &mut ModelParams,
    grads: &ModelParams,
    cfg: &OptimizerConfig,
    pos: SchedulePosition,
) -> Result<()> {
    if !(params.same_shape(grads) && params.same_shape(&state.first_moment)) {
        return Err(Error::Shape("optimizer step: params, grads and state differ in shape".into()));
    }
    let model_lr = lr_at(pos.step, pos.total_steps, cfg.model_lr, cfg.warmup_fraction);
    let sigma_lr = if cfg.sigma_warmup {
        lr_at(pos.step, pos.total_steps, cfg.sigma_lr, cfg.warmup_fraction)
    } else {
        cfg.sigma_lr
    };

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    let blocks = params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.first_moment.blocks_mut())
        .zip(state.second_moment.blocks_mut());
    for (((p, g), m), v) in blocks {
        let lr = if p.kind == ParamKind::LogVar { sigma_lr } else { model_lr };
        let decay = if p.kind == ParamKind::Weight {
            1.0 - lr * cfg.weight_decay
        } else {
            1.0
        };
        for (((x, &gi), mi), vi) in p.values.iter_mut().zip(g.values).zip(m.values.iter_mut()).zip(v.values.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *x = *x * decay - lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }

    state.last_model_lr = model_lr;
    state.last_sigma_lr = sigma_lr;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeaturizerConfig;
    use crate::model::{init_params, ModelConfig};

    fn params() -> ModelParams {
        let m = ModelConfig {
            embed_dim: 2,
            hidden_dim: 3,
            ..Default::default()
        };
        let f = FeaturizerConfig {
            bucket_count: 4,
            ..Default::default()
        };
        init_params(&m, &f, 3)
    }

    fn no_warmup() -> OptimizerConfig {
        OptimizerConfig {
            warmup_fraction: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_at(0, 100, 1.0, 0.1), 0.0);
        assert_eq!(lr_at(5, 100, 1.0, 0.1), 0.5);
        assert_eq!(lr_at(10, 100, 1.0, 0.1), 1.0);
        assert_eq!(lr_at(55, 100, 1.0, 0.1), 1.0);
        assert_eq!(lr_at(100, 100, 1.0, 0.1), 1.0);
        // ceil(0.1 * 15) = 2 warmup steps
        assert_eq!(lr_at(1, 15, 1.0, 0.1), 0.5);
        assert_eq!(lr_at(0, 10, 2.0, 0.0), 2.0);
    }

    #[test]
    fn group_lr_ratio_is_constant() {
        let cfg = OptimizerConfig::default();
        for s in 1..=200 {
            let m = lr_at(s, 200, cfg.model_lr, cfg.warmup_fraction);
            let g = lr_at(s, 200, cfg.sigma_lr, cfg.warmup_fraction);
            assert!((g / m - 2500.0).abs() < 1e-9, "step {s}: {}", g / m);
        }
    }

    #[test]
    fn clipping() {
        let mut g = ModelParams::zeros(1, 1, 1);
        g.head_v_b = 0.3;
        g.head_a_b = 0.4;
        let before = g.clone();
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g, before);

        g.head_v_b = 3.0;
        g.head_a_b = 4.0;
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 5.0);
        assert!((g.head_v_b - 0.6).abs() < 1e-15 && (g.head_a_b - 0.8).abs() < 1e-15);

        let mut big = params();
        big.scale(1e3);
        clip_gradients(&mut big, 1.0).unwrap();
        assert!(big.sq_norm().sqrt() <= 1.0 + 1e-12);

        g.logvar_v = f64::NAN;
        assert!(matches!(clip_gradients(&mut g, 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_gradient_step_is_identity() {
        let mut p = params();
        let before = p.clone();
        let mut st = OptimizerState::new(&p);
        let g = p.zeros_like();
        let pos = st.next_position(10);
        step(&mut st, &mut p, &g, &no_warmup(), pos).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut p = params();
        let before = p.clone();
        let mut g = p.zeros_like();
        for (i, b) in g.blocks_mut().into_iter().enumerate() {
            for (j, x) in b.values.iter_mut().enumerate() {
                *x = if (i + j) % 2 == 0 { 0.3 + j as f64 } else { -2.0 };
            }
        }
        let cfg = no_warmup();
        let mut st = OptimizerState::new(&p);
        let pos = st.next_position(10);
        step(&mut st, &mut p, &g, &cfg, pos).unwrap();
        for ((a, b), gr) in p.blocks().iter().zip(before.blocks()).zip(g.blocks()) {
            let lr = if a.kind == ParamKind::LogVar { cfg.sigma_lr } else { cfg.model_lr };
            for ((x, x0), gi) in a.values.iter().zip(b.values).zip(gr.values) {
                let delta = x - x0;
                assert_eq!(delta.signum(), -gi.signum());
                assert!((delta.abs() - lr).abs() < lr * 1e-6, "{}: {delta}", a.name);
            }
        }
    }

    #[test]
    fn weight_decay_is_decoupled_and_model_only() {
        let mut p = params();
        p.hidden_b = vec![0.5; 3];
        let before = p.clone();
        let cfg = OptimizerConfig {
            weight_decay: 0.01,
            ..no_warmup()
        };
        let mut st = OptimizerState::new(&p);
        let pos = st.next_position(10);
        step(&mut st, &mut p, &before.zeros_like(), &cfg, pos).unwrap();
        let factor = 1.0 - cfg.model_lr * 0.01;
        for (a, b) in p.embedding.iter().zip(&before.embedding) {
            assert!((a - b * factor).abs() < 1e-18);
        }
        assert_eq!(p.hidden_b, before.hidden_b);
        assert_eq!((p.logvar_v, p.logvar_a), (before.logvar_v, before.logvar_a));
    }

    #[test]
    fn shape_mismatch() {
        let mut p = params();
        let mut st = OptimizerState::new(&p);
        let g = ModelParams::zeros(9, 9, 9);
        assert!(matches!(
            step(&mut st, &mut p, &g, &no_warmup(), SchedulePosition { step: 1, total_steps: 1 }),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut p = params();
            let mut g = p.clone();
            g.scale(0.7);
            let mut st = OptimizerState::new(&p);
            for _ in 0..5 {
                let pos = st.next_position(5);
                step(&mut st, &mut p, &g, &OptimizerConfig::default(), pos).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }
}
