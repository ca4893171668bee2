use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vareg::metrics::{dim_rmse, ensemble_mean_values, joint_rmse, pcc, MetricsReport};

fn oracle_rmse(p: &[f64], g: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        acc += (p[i] - g[i]) * (p[i] - g[i]);
    }
    (acc / p.len() as f64).sqrt()
}

fn oracle_joint(p: &[(f64, f64)], g: &[(f64, f64)]) -> f64 {
    let mut acc = 0.0;
    for i in 0..p.len() {
        acc += (p[i].0 - g[i].0).powi(2) + (p[i].1 - g[i].1).powi(2);
    }
    (acc / p.len() as f64).sqrt()
}

fn oracle_pcc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n).sqrt();
    x.iter().zip(y).map(|(a, b)| ((a - mx) / sx) * ((b - my) / sy)).sum::<f64>() / n
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random_range(1.0..9.0), rng.random_range(1.0..9.0))).collect()
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        let p = random_pairs(&mut rng, n);
        let g = random_pairs(&mut rng, n);
        let (pv, pa): (Vec<f64>, Vec<f64>) = p.iter().copied().unzip();
        let (gv, ga): (Vec<f64>, Vec<f64>) = g.iter().copied().unzip();

        let j = joint_rmse(&p, &g).unwrap();
        assert!((j - oracle_joint(&p, &g)).abs() < 1e-12);
        let v = dim_rmse(&pv, &gv).unwrap();
        let a = dim_rmse(&pa, &ga).unwrap();
        assert!((v - oracle_rmse(&pv, &gv)).abs() < 1e-12);
        assert!((a - oracle_rmse(&pa, &ga)).abs() < 1e-12);
        assert!((j * j - (v * v + a * a)).abs() < 1e-9);
        assert!((pcc(&pv, &gv).unwrap() - oracle_pcc(&pv, &gv)).abs() < 1e-12);
        assert!((pcc(&pa, &ga).unwrap() - oracle_pcc(&pa, &ga)).abs() < 1e-12);
    }
}

#[test]
fn ensemble_obeys_jensen() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let n = rng.random_range(1..40);
        let k = rng.random_range(1..6);
        let gold = random_pairs(&mut rng, n);
        let sets: Vec<Vec<(f64, f64)>> = (0..k).map(|_| random_pairs(&mut rng, n)).collect();
        let mean = ensemble_mean_values(&sets).unwrap();
        let ens = MetricsReport::compute(&mean, &gold).unwrap();
        let seeds: Vec<MetricsReport> = sets.iter().map(|s| MetricsReport::compute(s, &gold).unwrap()).collect();
        let avg = |f: fn(&MetricsReport) -> f64| seeds.iter().map(f).sum::<f64>() / k as f64;
        assert!(ens.rmse_v.powi(2) <= avg(|r| r.rmse_v.powi(2)) + 1e-12);
        assert!(ens.rmse_a.powi(2) <= avg(|r| r.rmse_a.powi(2)) + 1e-12);
        let worst = seeds.iter().map(|r| r.joint_rmse).fold(0.0, f64::max);
        assert!(ens.joint_rmse <= worst + 1e-12);
    }
}
