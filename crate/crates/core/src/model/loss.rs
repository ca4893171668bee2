//! Task losses and the two ways of combining them.
//!
//! With Gaussian observation noise of variance `sigma^2` per task, dropping
//! constants from the negative log-likelihood leaves
//! `L = 1/(2 sigma_V^2) L_V + 1/(2 sigma_A^2) L_A + log sigma_V + log sigma_A`.
//! Optimizing `s = log sigma^2` instead of `sigma` gives the form used here,
//!
//! ```text
//! L = 0.5 exp(-s_V) L_V + 0.5 exp(-s_A) L_A + (s_V + s_A) / 2
//! ```
//!
//! which keeps `sigma^2 = exp(s)` positive for every finite `s`. Absolute values
//! are therefore not comparable to a full negative log-likelihood.
//! For fixed task losses the stationary point is `exp(s) = L`.

use crate::error::{Error, Result};

/// Per-task batch-mean squared errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLosses {
    pub loss_v: f64,
    pub loss_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyLoss {
    pub total: f64,
    pub grad_s_v: f64,
    pub grad_s_a: f64,
}

pub fn mse(preds: &[f64], golds: &[f64]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!("{} predictions vs {} golds", preds.len(), golds.len())));
    }
    if preds.is_empty() {
        return Err(Error::invalid("mse of empty sequence"));
    }
    let sum: f64 = preds.iter().zip(golds).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok(sum / preds.len() as f64)
}

/// Total objective and its partial derivatives in `s`, holding the task losses fixed.
pub fn uncertainty_loss(t: TaskLosses, s_v: f64, s_a: f64) -> Result<UncertaintyLoss> {
    let prec_v = (-s_v).exp();
    let prec_a = (-s_a).exp();
    let out = UncertaintyLoss {
        total: 0.5 * prec_v * t.loss_v + 0.5 * prec_a * t.loss_a + 0.5 * (s_v + s_a),
        grad_s_v: 0.5 - 0.5 * prec_v * t.loss_v,
        grad_s_a: 0.5 - 0.5 * prec_a * t.loss_a,
    };
    if [out.total, out.grad_s_v, out.grad_s_a].iter().all(|x| x.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite(format!(
            "uncertainty loss (s_V={s_v}, s_A={s_a}, L_V={}, L_A={})",
            t.loss_v, t.loss_a
        )))
    }
}

pub fn fixed_loss(t: TaskLosses) -> f64 {
    t.loss_v + t.loss_a
}
