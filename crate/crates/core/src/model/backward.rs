use rand::Rng;

use super::loss::{fixed_loss, uncertainty_loss, TaskLosses};
use super::{LossMode, ModelParams};
use crate::error::{Error, Result};
use crate::features::FeatureIndices;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: FeatureIndices,
    pub valence: f64,
    pub arousal: f64,
}

/// Inverted-dropout multipliers for the hidden layer: each entry is `0` or
/// `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(pub Vec<f64>);

impl DropoutMask {
    pub fn sample<R: Rng>(rng: &mut R, hidden_dim: usize, rate: f64) -> Self {
        let keep = 1.0 / (1.0 - rate);
        DropoutMask(
            (0..hidden_dim)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub z: Vec<f64>,
    /// `tanh` activations before dropout.
    pub activation: Vec<f64>,
    /// Representation fed to both heads (after dropout, if any).
    pub hidden: Vec<f64>,
    pub y_v: f64,
    pub y_a: f64,
}

fn check_indices(indices: &[usize], bucket_count: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= bucket_count) {
        Some(i) => Err(Error::Shape(format!("feature index {i} >= bucket count {bucket_count}"))),
        None => Ok(()),
    }
}

fn mean_pool(out: &mut [f64], p: &ModelParams, indices: &[usize]) {
    if indices.is_empty() {
        return;
    }
    let d = p.embed_dim;
    for &i in indices {
        let row = &p.embedding[i * d..(i + 1) * d];
        out.iter_mut().zip(row).for_each(|(o, r)| *o += r);
    }
    let inv = 1.0 / indices.len() as f64;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// One instance through the network. `mask = None` is eval mode.
pub fn forward(p: &ModelParams, feats: &FeatureIndices, mask: Option<&DropoutMask>) -> Result<ForwardPass> {
    check_indices(&feats.text_indices, p.bucket_count)?;
    check_indices(&feats.aspect_indices, p.bucket_count)?;
    let (de, dh) = (p.embed_dim, p.hidden_dim);

    let mut z = vec![0.0; 2 * de];
    mean_pool(&mut z[..de], p, &feats.text_indices);
    mean_pool(&mut z[de..], p, &feats.aspect_indices);

    let mut pre = p.hidden_b.clone();
    for (zi, row) in z.iter().zip(p.hidden_w.chunks_exact(dh)) {
        if *zi != 0.0 {
            pre.iter_mut().zip(row).for_each(|(a, w)| *a += zi * w);
        }
    }
    let activation: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();
    let hidden = match mask {
        Some(m) => {
            if m.0.len() != dh {
                return Err(Error::Shape(format!("dropout mask of {} for hidden dim {dh}", m.0.len())));
            }
            activation.iter().zip(&m.0).map(|(h, k)| h * k).collect()
        }
        None => activation.clone(),
    };
    let dot = |w: &[f64]| w.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
    let y_v = dot(&p.head_v_w) + p.head_v_b;
    let y_a = dot(&p.head_a_w) + p.head_a_b;
    Ok(ForwardPass {
        z,
        activation,
        hidden,
        y_v,
        y_a,
    })
}

fn check_batch(batch: &[LabeledFeatures], masks: Option<&[DropoutMask]>) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::Shape(format!("{} dropout masks for batch of {}", m.len(), batch.len())));
        }
    }
    Ok(())
}

fn passes(p: &ModelParams, batch: &[LabeledFeatures], masks: Option<&[DropoutMask]>) -> Result<Vec<ForwardPass>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, ex)| forward(p, &ex.features, masks.map(|m| &m[i])))
        .collect()
}

fn task_losses(batch: &[LabeledFeatures], fwd: &[ForwardPass]) -> TaskLosses {
    let n = batch.len() as f64;
    let (mut sv, mut sa) = (0.0, 0.0);
    for (ex, f) in batch.iter().zip(fwd) {
        sv += (f.y_v - ex.valence).powi(2);
        sa += (f.y_a - ex.arousal).powi(2);
    }
    TaskLosses {
        loss_v: sv / n,
        loss_a: sa / n,
    }
}

fn combine(p: &ModelParams, t: TaskLosses, mode: LossMode) -> Result<f64> {
    match mode {
        LossMode::Uncertainty => Ok(uncertainty_loss(t, p.logvar_v, p.logvar_a)?.total),
        LossMode::Fixed => Ok(fixed_loss(t)),
    }
}

/// Batch objective only; used as the finite-difference oracle.
pub fn objective(
    p: &ModelParams,
    batch: &[LabeledFeatures],
    mode: LossMode,
    masks: Option<&[DropoutMask]>,
) -> Result<f64> {
    check_batch(batch, masks)?;
    let fwd = passes(p, batch, masks)?;
    combine(p, task_losses(batch, &fwd), mode)
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub loss: f64,
    pub task_losses: TaskLosses,
    pub grads: ModelParams,
}

/// Exact gradients of the batch objective (batch-mean MSE per task) with
/// respect to every parameter, using the given dropout masks.
pub fn backward(
    p: &ModelParams,
    batch: &[LabeledFeatures],
    mode: LossMode,
    masks: Option<&[DropoutMask]>,
) -> Result<Backward> {
    check_batch(batch, masks)?;
    let fwd = passes(p, batch, masks)?;
    let t = task_losses(batch, &fwd);
    let mut g = p.zeros_like();

    // d loss / d MSE_task
    let (coef_v, coef_a, loss) = match mode {
        LossMode::Uncertainty => {
            let u = uncertainty_loss(t, p.logvar_v, p.logvar_a)?;
            g.logvar_v = u.grad_s_v;
            g.logvar_a = u.grad_s_a;
            (0.5 * (-p.logvar_v).exp(), 0.5 * (-p.logvar_a).exp(), u.total)
        }
        LossMode::Fixed => (1.0, 1.0, fixed_loss(t)),
    };

    let (de, dh) = (p.embed_dim, p.hidden_dim);
    let scale = 2.0 / batch.len() as f64;
    let mut d_hidden = vec![0.0; dh];
    let mut d_pre = vec![0.0; dh];
    let mut d_z = vec![0.0; 2 * de];

    for (i, (ex, f)) in batch.iter().zip(&fwd).enumerate() {
        let dy_v = coef_v * scale * (f.y_v - ex.valence);
        let dy_a = coef_a * scale * (f.y_a - ex.arousal);

        g.head_v_b += dy_v;
        g.head_a_b += dy_a;
        for (j, d) in d_hidden.iter_mut().enumerate() {
            g.head_v_w[j] += dy_v * f.hidden[j];
            g.head_a_w[j] += dy_a * f.hidden[j];
            *d = dy_v * p.head_v_w[j] + dy_a * p.head_a_w[j];
        }
        if let Some(m) = masks {
            d_hidden.iter_mut().zip(&m[i].0).for_each(|(d, k)| *d *= k);
        }
        for j in 0..dh {
            let h = f.activation[j];
            d_pre[j] = d_hidden[j] * (1.0 - h * h);
            g.hidden_b[j] += d_pre[j];
        }

        for (k, (gw_row, w_row)) in g
            .hidden_w
            .chunks_exact_mut(dh)
            .zip(p.hidden_w.chunks_exact(dh))
            .enumerate()
        {
            let zk = f.z[k];
            let mut acc = 0.0;
            for j in 0..dh {
                gw_row[j] += zk * d_pre[j];
                acc += w_row[j] * d_pre[j];
            }
            d_z[k] = acc;
        }

        scatter_rows(&mut g.embedding, de, &ex.features.text_indices, &d_z[..de]);
        scatter_rows(&mut g.embedding, de, &ex.features.aspect_indices, &d_z[de..]);
    }

    Ok(Backward {
        loss,
        task_losses: t,
        grads: g,
    })
}

fn scatter_rows(table: &mut [f64], d: usize, indices: &[usize], d_pooled: &[f64]) {
    if indices.is_empty() {
        return;
    }
    let inv = 1.0 / indices.len() as f64;
    for &i in indices {
        table[i * d..(i + 1) * d]
            .iter_mut()
            .zip(d_pooled)
            .for_each(|(g, dz)| *g += dz * inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeaturizerConfig;
    use crate::model::{init_params, ModelConfig};
    use crate::rng::{stream_rng, Stream};

    fn tiny() -> (ModelConfig, FeaturizerConfig) {
        (
            ModelConfig {
                embed_dim: 4,
                hidden_dim: 5,
                dropout: 0.3,
                ..Default::default()
            },
            FeaturizerConfig {
                bucket_count: 16,
                ..Default::default()
            },
        )
    }

    fn batch(n: usize) -> Vec<LabeledFeatures> {
        (0..n)
            .map(|i| LabeledFeatures {
                features: FeatureIndices {
                    text_indices: vec![i % 16, (i * 7 + 3) % 16, 2],
                    aspect_indices: vec![(i * 5) % 16],
                },
                valence: 3.0 + i as f64 * 0.5,
                arousal: 6.0 - i as f64 * 0.25,
            })
            .collect()
    }

    #[test]
    fn zero_params_predict_zero() {
        let p = ModelParams::zeros(16, 4, 5);
        let f = forward(&p, &batch(1)[0].features, None).unwrap();
        assert_eq!((f.y_v, f.y_a), (0.0, 0.0));
    }

    #[test]
    fn bias_only_path() {
        let mut p = ModelParams::zeros(16, 4, 5);
        p.head_v_b = 3.0;
        p.head_a_b = 4.0;
        let f = forward(&p, &FeatureIndices::default(), None).unwrap();
        assert_eq!((f.y_v, f.y_a), (3.0, 4.0));
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (m, fc) = tiny();
        let p = init_params(&m, &fc, 1);
        let feats = &batch(3)[2].features;
        let a = forward(&p, feats, None).unwrap();
        let b = forward(&p, feats, None).unwrap();
        assert_eq!((a.y_v, a.y_a), (b.y_v, b.y_a));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let p = ModelParams::zeros(16, 4, 5);
        let feats = FeatureIndices {
            text_indices: vec![16],
            aspect_indices: vec![],
        };
        assert!(matches!(forward(&p, &feats, None), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_everything_gradients() {
        let p = ModelParams::zeros(16, 4, 5);
        let b: Vec<_> = batch(4)
            .into_iter()
            .map(|mut ex| {
                ex.valence = 0.0;
                ex.arousal = 0.0;
                ex
            })
            .collect();
        let out = backward(&p, &b, LossMode::Uncertainty, None).unwrap();
        assert_eq!((out.grads.logvar_v, out.grads.logvar_a), (0.5, 0.5));
        let mut rest = out.grads.clone();
        rest.logvar_v = 0.0;
        rest.logvar_a = 0.0;
        assert_eq!(rest.sq_norm(), 0.0);
        assert!(backward(&p, &[], LossMode::Fixed, None).is_err());
    }

    #[test]
    fn uncertainty_grads_scale_fixed_grads() {
        let (m, fc) = tiny();
        let b = batch(6);
        for s in [-1.2, 0.0, 0.7] {
            let mut p = init_params(&m, &fc, 5);
            p.logvar_v = s;
            p.logvar_a = s;
            let masks: Vec<_> = {
                let mut rng = stream_rng(3, Stream::Dropout);
                (0..b.len()).map(|_| DropoutMask::sample(&mut rng, 5, 0.3)).collect()
            };
            let u = backward(&p, &b, LossMode::Uncertainty, Some(&masks)).unwrap().grads;
            let f = backward(&p, &b, LossMode::Fixed, Some(&masks)).unwrap().grads;
            let factor = 0.5 * (-s).exp();
            let (ub, fb) = (u.blocks(), f.blocks());
            for (bu, bf) in ub.iter().zip(&fb).filter(|(b, _)| b.kind != crate::model::ParamKind::LogVar) {
                for (x, y) in bu.values.iter().zip(bf.values) {
                    assert!((x - factor * y).abs() <= 1e-12 * (1.0 + y.abs()), "{}: {x} vs {}", bu.name, factor * y);
                }
            }
            assert_eq!((f.logvar_v, f.logvar_a), (0.0, 0.0));
        }
    }

    #[test]
    fn loss_matches_objective() {
        let (m, fc) = tiny();
        let p = init_params(&m, &fc, 2);
        let b = batch(5);
        for mode in [LossMode::Uncertainty, LossMode::Fixed] {
            let bw = backward(&p, &b, mode, None).unwrap();
            assert_eq!(bw.loss, objective(&p, &b, mode, None).unwrap());
        }
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut rng = stream_rng(0, Stream::Dropout);
        let m = DropoutMask::sample(&mut rng, 10_000, 0.1);
        let dropped = m.0.iter().filter(|&&k| k == 0.0).count();
        assert!((800..1200).contains(&dropped), "{dropped}");
        assert!(m.0.iter().all(|&k| k == 0.0 || (k - 1.0 / 0.9).abs() < 1e-15));
        let none = DropoutMask::sample(&mut rng, 50, 0.0);
        assert!(none.0.iter().all(|&k| k == 1.0));
    }
}
