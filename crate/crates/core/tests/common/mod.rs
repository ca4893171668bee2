#![allow(dead_code)]

use vareg::corpus::{generate_synthetic, split_dataset, Dataset, SynthSpec};
use vareg::features::FeaturizerConfig;
use vareg::model::{init_params, uncertainty_loss, ModelConfig, ModelParams, TaskLosses};
use vareg::optimizer::{step, OptimizerConfig, OptimizerState};

/// Synthetic corpus split 80/20 into train and dev.
pub fn benchmark(n: usize, noise_v: f64, noise_a: f64, seed: u64) -> (Dataset, Dataset) {
    let ds = generate_synthetic(&SynthSpec {
        n_instances: n,
        valence_noise_sd: noise_v,
        arousal_noise_sd: noise_a,
        seed,
        ..Default::default()
    })
    .unwrap();
    split_dataset(&ds, 0.2, seed).unwrap()
}

pub fn small_params(seed: u64) -> ModelParams {
    let fc = FeaturizerConfig {
        bucket_count: 64,
        ..Default::default()
    };
    let mc = ModelConfig {
        embed_dim: 4,
        hidden_dim: 6,
        ..Default::default()
    };
    init_params(&mc, &fc, seed)
}

/// Runs the optimizer on the log-variances alone against constant task
/// losses, with a constant sigma learning rate. Returns the starting and final
/// parameters; model gradients are zero throughout.
pub fn fit_log_variances(losses: TaskLosses, seed: u64, steps: u64) -> (ModelParams, ModelParams) {
    let cfg = OptimizerConfig {
        weight_decay: 0.0,
        sigma_warmup: false,
        ..Default::default()
    };
    let start = small_params(seed);
    let mut p = start.clone();
    let mut st = OptimizerState::new(&p);
    for _ in 0..steps {
        let u = uncertainty_loss(losses, p.logvar_v, p.logvar_a).unwrap();
        let mut g = p.zeros_like();
        g.logvar_v = u.grad_s_v;
        g.logvar_a = u.grad_s_a;
        let pos = st.next_position(steps);
        step(&mut st, &mut p, &g, &cfg, pos).unwrap();
    }
    (start, p)
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
