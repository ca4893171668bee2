mod common;

use common::{benchmark, fit_log_variances};
use vareg::corpus::{read_predictions, write_predictions};
use vareg::model::{load_model, save_model, TaskLosses};
use vareg::trainer::{predict, train, TrainConfig};

fn quick_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk_scale();
    cfg.seed = seed;
    cfg.max_epochs = 4;
    cfg.model.embed_dim = 8;
    cfg.model.hidden_dim = 12;
    cfg.featurizer.bucket_count = 512;
    cfg
}

#[test]
fn accumulation_matches_large_batch() {
    // 256 train instances: every accumulation group is four full micro-batches.
    let (tr, dev) = benchmark(320, 0.3, 0.9, 5);
    assert_eq!(tr.len() % 64, 0);
    let mut a = quick_config(1);
    a.batch_size = 16;
    a.accumulation_steps = 4;
    let mut b = a.clone();
    b.batch_size = 64;
    b.accumulation_steps = 1;
    let ra = train(&a, &tr, &dev).unwrap();
    let rb = train(&b, &tr, &dev).unwrap();
    assert_eq!(ra.history.len(), rb.history.len());
    for (x, y) in ra.history.iter().zip(&rb.history) {
        let rel = (x.train_loss - y.train_loss).abs() / y.train_loss.abs();
        assert!(rel < 1e-6, "epoch {}: {} vs {}", x.epoch, x.train_loss, y.train_loss);
        assert!((x.dev.joint_rmse - y.dev.joint_rmse).abs() < 1e-6 * y.dev.joint_rmse);
    }
}

#[test]
fn best_checkpoint_is_history_minimum() {
    let (tr, dev) = benchmark(600, 0.3, 0.9, 2);
    let mut cfg = quick_config(3);
    cfg.max_epochs = 8;
    cfg.patience = 2;
    let run = train(&cfg, &tr, &dev).unwrap();
    let min = run.history.iter().map(|h| h.dev.joint_rmse).fold(f64::INFINITY, f64::min);
    assert_eq!(run.best_dev().joint_rmse, min);
    let restored = vareg::trainer::evaluate(&run.best, &dev).unwrap();
    assert_eq!(restored.joint_rmse, min);
    assert_eq!(run.sigma_trajectory.len(), run.history.len());
    assert!(run.stopped_epoch <= cfg.max_epochs);
}

#[test]
fn patience_stops_early() {
    let (tr, dev) = benchmark(400, 0.3, 0.9, 4);
    let mut cfg = quick_config(9);
    cfg.max_epochs = 25;
    cfg.patience = 1;
    cfg.optimizer.model_lr = 0.2;
    let run = train(&cfg, &tr, &dev).unwrap();
    assert!(run.stopped_epoch < 25);
    assert_eq!(run.stopped_epoch, run.best_epoch + 1);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (tr, dev) = benchmark(300, 0.3, 0.9, 8);
    let run = train(&quick_config(4), &tr, &dev).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.txt");
    save_model(&ckpt, &run.best).unwrap();
    let back = load_model(&ckpt).unwrap();
    let p1 = predict(&run.best, &dev).unwrap();
    let p2 = predict(&back, &dev).unwrap();
    assert_eq!(p1, p2);

    let file = dir.path().join("pred.tsv");
    let ids: Vec<String> = p1.iter().map(|p| p.id.clone()).collect();
    let vals: Vec<(f64, f64)> = p1.iter().map(|p| (p.valence, p.arousal)).collect();
    write_predictions(&file, &ids, &vals).unwrap();
    let read = read_predictions(&file).unwrap();
    for (r, p) in read.iter().zip(&p1) {
        assert_eq!(r.id, p.id);
        assert!((r.valence - p.valence.clamp(1.0, 9.0)).abs() <= 0.005 + 1e-12);
        assert!((r.arousal - p.arousal.clamp(1.0, 9.0)).abs() <= 0.005 + 1e-12);
    }
}

#[test]
fn same_seed_same_run() {
    let (tr, dev) = benchmark(300, 0.3, 0.9, 6);
    let a = train(&quick_config(11), &tr, &dev).unwrap();
    let b = train(&quick_config(11), &tr, &dev).unwrap();
    assert_eq!(a, b);
    let c = train(&quick_config(12), &tr, &dev).unwrap();
    assert_ne!(a.best.params, c.best.params);
}

#[test]
fn log_variances_reach_task_losses() {
    for (seed, lv, la) in [(0, 0.09, 0.81), (1, 1.5, 0.3), (2, 3.0, 0.05)] {
        let (start, p) = fit_log_variances(TaskLosses { loss_v: lv, loss_a: la }, seed, 500);
        assert!(((p.logvar_v.exp() - lv) / lv).abs() < 1e-3, "seed {seed}: {} vs {lv}", p.logvar_v.exp());
        assert!(((p.logvar_a.exp() - la) / la).abs() < 1e-3, "seed {seed}: {} vs {la}", p.logvar_a.exp());
        assert_eq!(start.embedding, p.embedding);
        assert_eq!(start.hidden_w, p.hidden_w);
    }
}
