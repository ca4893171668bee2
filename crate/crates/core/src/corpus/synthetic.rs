//! Synthetic corpus with a known latent valence/arousal function and
//! independently controlled per-dimension label noise.
//!
//! Recipe, all draws from the `Synthetic` stream of `seed`, in this order:
//! 1. per-token contributions `(v_i, a_i) ~ U(-1, 1)` for every vocabulary token;
//! 2. per instance: `k ~ U{min..=max}` tokens drawn with replacement, the aspect
//!    is one of those `k` picked uniformly, then two standard normals `(z_v, z_a)`.
//!
//! The latent is `5 + 2 * mean(contributions)` over the `k` tokens plus the
//! aspect token once more. Observed labels are `clamp(latent + sd * z, 1, 9)`.
//! The normals are drawn even when a noise SD is zero, so a zero-noise corpus
//! shares its texts and latents with every noisy corpus of the same seed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Instance, LABEL_MAX, LABEL_MIN};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub vocab_size: usize,
    /// Inclusive range of tokens per text.
    pub tokens_per_text: (usize, usize),
    pub valence_noise_sd: f64,
    pub arousal_noise_sd: f64,
    pub n_instances: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 200,
            tokens_per_text: (5, 15),
            valence_noise_sd: 0.3,
            arousal_noise_sd: 0.9,
            n_instances: 5000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        // A one-token vocabulary is accepted: every text is that token.
        if self.vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        let (lo, hi) = self.tokens_per_text;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("tokens_per_text range {lo}..={hi} is invalid")));
        }
        for (name, sd) in [("valence", self.valence_noise_sd), ("arousal", self.arousal_noise_sd)] {
            if !sd.is_finite() || sd < 0.0 {
                return Err(Error::invalid(format!("{name} noise sd {sd} must be finite and >= 0")));
            }
        }
        if self.n_instances == 0 {
            return Err(Error::invalid("n_instances must be positive"));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Synthetic);

    let contrib: Vec<(f64, f64)> = (0..spec.vocab_size)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();

    let width = (spec.n_instances - 1).to_string().len();
    let (lo, hi) = spec.tokens_per_text;
    let mut instances = Vec::with_capacity(spec.n_instances);
    for n in 0..spec.n_instances {
        let k = rng.random_range(lo..=hi);
        let tokens: Vec<usize> = (0..k).map(|_| rng.random_range(0..spec.vocab_size)).collect();
        let aspect = tokens[rng.random_range(0..k)];
        let z_v: f64 = rng.sample(StandardNormal);
        let z_a: f64 = rng.sample(StandardNormal);

        let (mut sum_v, mut sum_a) = contrib[aspect];
        for &t in &tokens {
            sum_v += contrib[t].0;
            sum_a += contrib[t].1;
        }
        let count = (k + 1) as f64;
        let latent_v = 5.0 + 2.0 * sum_v / count;
        let latent_a = 5.0 + 2.0 * sum_a / count;

        let text = tokens.iter().map(|t| format!("t{t}")).collect::<Vec<_>>().join(" ");
        instances.push(Instance {
            id: format!("syn-{n:0width$}"),
            text,
            aspect: format!("t{aspect}"),
            valence: Some((latent_v + spec.valence_noise_sd * z_v).clamp(LABEL_MIN, LABEL_MAX)),
            arousal: Some((latent_a + spec.arousal_noise_sd * z_a).clamp(LABEL_MIN, LABEL_MAX)),
        });
    }

    Ok(Dataset {
        name: format!("synthetic-{}", spec.seed),
        instances,
    })
}
