//! Central-difference check of [`backward`](super::backward) in eval mode.

use std::collections::BTreeSet;

use rand::Rng;

use super::backward::{backward, forward, LabeledFeatures};
use super::{LossMode, ModelParams};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub epsilon: f64,
    /// Coordinates to probe, drawn uniformly from those the batch can reach.
    /// Both log-variances are always probed in addition.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            epsilon: 1e-5,
            samples: 100,
            seed: 0,
        }
    }
}

/// Coordinates whose partial derivative can be nonzero for this batch:
/// every non-embedding coordinate plus the embedding rows the batch indexes.
fn reachable(p: &ModelParams, batch: &[LabeledFeatures]) -> Vec<usize> {
    let rows: BTreeSet<usize> = batch
        .iter()
        .flat_map(|ex| ex.features.text_indices.iter().chain(&ex.features.aspect_indices))
        .copied()
        .collect();
    let d = p.embed_dim;
    rows.into_iter()
        .flat_map(|r| r * d..(r + 1) * d)
        .chain(p.embedding.len()..p.len())
        .collect()
}

/// `objective(plus) - objective(minus)` from forward passes only, with each
/// squared-error difference taken as `(y+ - y-)(y+ + y- - 2 gold)`.
fn objective_delta(plus: &ModelParams, minus: &ModelParams, batch: &[LabeledFeatures], mode: LossMode) -> Result<f64> {
    let n = batch.len() as f64;
    let mut mse_m = (0.0, 0.0);
    let (mut d_v, mut d_a) = (0.0, 0.0);
    for ex in batch {
        let fp = forward(plus, &ex.features, None)?;
        let fm = forward(minus, &ex.features, None)?;
        d_v += (fp.y_v - fm.y_v) * (fp.y_v + fm.y_v - 2.0 * ex.valence);
        d_a += (fp.y_a - fm.y_a) * (fp.y_a + fm.y_a - 2.0 * ex.arousal);
        mse_m.0 += (fm.y_v - ex.valence).powi(2);
        mse_m.1 += (fm.y_a - ex.arousal).powi(2);
    }
    let (d_v, d_a) = (d_v / n, d_a / n);
    let (minus_v, minus_a) = (mse_m.0 / n, mse_m.1 / n);
    Ok(match mode {
        LossMode::Fixed => d_v + d_a,
        LossMode::Uncertainty => {
            // 0.5 e^{-s+} L+ - 0.5 e^{-s-} L- = 0.5 [e^{-s+} dL + (e^{-s+} - e^{-s-}) L-]
            let term = |sp: f64, sm: f64, dl: f64, lm: f64| {
                0.5 * ((-sp).exp() * dl + (-sm).exp() * (sm - sp).exp_m1() * lm)
            };
            term(plus.logvar_v, minus.logvar_v, d_v, minus_v)
                + term(plus.logvar_a, minus.logvar_a, d_a, minus_a)
                + 0.5 * ((plus.logvar_v - minus.logvar_v) + (plus.logvar_a - minus.logvar_a))
        }
    })
}

/// Maximum over probed coordinates of `|g - g_fd| / max(|g|, 1e-8)`.
pub fn finite_diff_check(
    params: &ModelParams,
    batch: &[LabeledFeatures],
    mode: LossMode,
    check: GradCheck,
) -> Result<f64> {
    if check.epsilon.is_nan() || check.epsilon <= 0.0 {
        return Err(Error::invalid(format!("epsilon {} must be > 0", check.epsilon)));
    }
    let analytic = backward(params, batch, mode, None)?.grads;

    let pool = reachable(params, batch);
    let mut rng = stream_rng(check.seed, Stream::Init);
    let n = params.len();
    let mut coords: Vec<usize> = (0..check.samples).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    coords.extend([n - 2, n - 1]);

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in coords {
        let x = probe.coord(i);
        *probe.coord_mut(i) = x + check.epsilon;
        let up = probe.clone();
        *probe.coord_mut(i) = x - check.epsilon;
        let numeric = objective_delta(&up, &probe, batch, mode)? / (2.0 * check.epsilon);
        *probe.coord_mut(i) = x;
        let g = analytic.coord(i);
        worst = worst.max((g - numeric).abs() / g.abs().max(1e-8));
    }
    Ok(worst)
}
