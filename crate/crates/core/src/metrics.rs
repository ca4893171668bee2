//! Evaluation metrics, seed ensembling and learned-variance diagnostics.
//!
//! Joint RMSE uses a single `1/N` over the summed two-dimensional error,
//! `sqrt(1/N sum[(v' - v)^2 + (a' - a)^2])`, so `joint^2 = rmse_V^2 + rmse_A^2`.
//! All metrics run on raw (unclamped) predictions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Prediction;
use crate::error::{Error, Result};
use crate::model::LossMode;

fn check_pair_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} predictions vs {b} golds")));
    }
    if a == 0 {
        return Err(Error::invalid("metric over empty sequence"));
    }
    Ok(())
}

pub fn joint_rmse(preds: &[(f64, f64)], golds: &[(f64, f64)]) -> Result<f64> {
    check_pair_lengths(preds.len(), golds.len())?;
    let sum: f64 = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| (p.0 - g.0).powi(2) + (p.1 - g.1).powi(2))
        .sum();
    Ok((sum / preds.len() as f64).sqrt())
}

pub fn dim_rmse(preds: &[f64], golds: &[f64]) -> Result<f64> {
    check_pair_lengths(preds.len(), golds.len())?;
    let sum: f64 = preds.iter().zip(golds).map(|(p, g)| (p - g).powi(2)).sum();
    Ok((sum / preds.len() as f64).sqrt())
}

/// Pearson correlation. Constant inputs are an error, not NaN.
pub fn pcc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("pcc over {} and {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("pcc needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pcc input has zero variance".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub joint_rmse: f64,
    pub rmse_v: f64,
    pub rmse_a: f64,
    /// `None` when a dimension's predictions or golds are constant (or `n < 2`).
    pub pcc_v: Option<f64>,
    pub pcc_a: Option<f64>,
    pub gap: Option<f64>,
}

impl MetricsReport {
    pub fn compute(preds: &[(f64, f64)], golds: &[(f64, f64)]) -> Result<Self> {
        let joint = joint_rmse(preds, golds)?;
        let split = |xs: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { xs.iter().copied().unzip() };
        let (pv, pa) = split(preds);
        let (gv, ga) = split(golds);
        let lenient = |r: Result<f64>| match r {
            Ok(x) => Ok(Some(x)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let pcc_v = lenient(pcc(&pv, &gv))?;
        let pcc_a = lenient(pcc(&pa, &ga))?;
        Ok(MetricsReport {
            n: preds.len(),
            joint_rmse: joint,
            rmse_v: dim_rmse(&pv, &gv)?,
            rmse_a: dim_rmse(&pa, &ga)?,
            pcc_v,
            pcc_a,
            gap: pcc_v.zip(pcc_a).map(|(v, a)| v - a),
        })
    }
}

fn opt3(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>10} {:>8} {:>8} {:>7} {:>7} {:>7}", "n", "joint_rmse", "rmse_v", "rmse_a", "pcc_v", "pcc_a", "gap")?;
        writeln!(
            f,
            "{:>6} {:>10.3} {:>8.3} {:>8.3} {:>7} {:>7} {:>7}",
            self.n,
            self.joint_rmse,
            self.rmse_v,
            self.rmse_a,
            opt3(self.pcc_v),
            opt3(self.pcc_a),
            opt3(self.gap)
        )
    }
}

/// Elementwise mean of K aligned prediction sets.
pub fn ensemble_mean_values(sets: &[Vec<(f64, f64)>]) -> Result<Vec<(f64, f64)>> {
    let first = sets.first().ok_or_else(|| Error::invalid("ensemble of zero prediction sets"))?;
    if let Some(bad) = sets.iter().find(|s| s.len() != first.len()) {
        return Err(Error::Shape(format!("prediction sets of length {} and {}", first.len(), bad.len())));
    }
    let k = sets.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let (sv, sa) = sets.iter().fold((0.0, 0.0), |(v, a), s| (v + s[i].0, a + s[i].1));
            (sv / k, sa / k)
        })
        .collect())
}

/// Seed-mean ensemble; every set must list the same ids in the same order.
pub fn ensemble_mean(sets: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    let first = sets.first().ok_or_else(|| Error::invalid("ensemble of zero prediction sets"))?;
    for (k, set) in sets.iter().enumerate() {
        if set.len() != first.len() {
            return Err(Error::Shape(format!("prediction set {k} has {} rows, expected {}", set.len(), first.len())));
        }
        if let Some((a, b)) = set.iter().zip(first).find(|(a, b)| a.id != b.id) {
            return Err(Error::invalid(format!("prediction set {k}: id {:?} where {:?} expected", a.id, b.id)));
        }
    }
    let values: Vec<Vec<(f64, f64)>> = sets
        .iter()
        .map(|s| s.iter().map(|p| (p.valence, p.arousal)).collect())
        .collect();
    Ok(first
        .iter()
        .zip(ensemble_mean_values(&values)?)
        .map(|(p, (valence, arousal))| Prediction {
            id: p.id.clone(),
            valence,
            arousal,
        })
        .collect())
}

/// Learned log-variances of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEntry {
    pub label: String,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub logvar_v: f64,
    pub logvar_a: f64,
}

impl SigmaEntry {
    fn require_uncertainty(&self) -> Result<()> {
        if self.loss_mode != LossMode::Uncertainty {
            return Err(Error::invalid(format!(
                "run {} (seed {}) was trained in {} mode; its log-variances are meaningless",
                self.label, self.seed, self.loss_mode
            )));
        }
        Ok(())
    }

    pub fn sigma2(&self) -> (f64, f64) {
        (self.logvar_v.exp(), self.logvar_a.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaRow {
    pub label: String,
    pub seed: u64,
    pub sigma2_v: f64,
    pub sigma2_a: f64,
    /// `sigma2_v / sigma2_a`
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

impl Spread {
    fn of(xs: impl Iterator<Item = f64>) -> Self {
        let (min, max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        Spread { min, max, range: max - min }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileDistance {
    pub a: String,
    pub b: String,
    pub seed: u64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaReport {
    pub rows: Vec<SigmaRow>,
    pub sigma2_v: Spread,
    pub sigma2_a: Spread,
    pub ratio: Spread,
    /// Max |sigma^2 difference| for every pair of runs sharing a seed.
    pub profile_distances: Vec<ProfileDistance>,
}

pub fn sigma_report(runs: &[SigmaEntry]) -> Result<SigmaReport> {
    if runs.is_empty() {
        return Err(Error::invalid("sigma report over zero runs"));
    }
    for r in runs {
        r.require_uncertainty()?;
    }
    let rows: Vec<SigmaRow> = runs
        .iter()
        .map(|r| {
            let (v, a) = r.sigma2();
            SigmaRow {
                label: r.label.clone(),
                seed: r.seed,
                sigma2_v: v,
                sigma2_a: a,
                ratio: v / a,
            }
        })
        .collect();
    let mut profile_distances = Vec::new();
    for (i, a) in runs.iter().enumerate() {
        for b in &runs[i + 1..] {
            if a.seed == b.seed {
                profile_distances.push(ProfileDistance {
                    a: a.label.clone(),
                    b: b.label.clone(),
                    seed: a.seed,
                    delta: compare_sigma_profiles(a, b)?,
                });
            }
        }
    }
    Ok(SigmaReport {
        sigma2_v: Spread::of(rows.iter().map(|r| r.sigma2_v)),
        sigma2_a: Spread::of(rows.iter().map(|r| r.sigma2_a)),
        ratio: Spread::of(rows.iter().map(|r| r.ratio)),
        rows,
        profile_distances,
    })
}

impl fmt::Display for SigmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>6} {:>9} {:>9} {:>9}", "run", "seed", "sigma2_V", "sigma2_A", "V/A")?;
        for r in &self.rows {
            writeln!(f, "{:<24} {:>6} {:>9.3} {:>9.3} {:>9.2}", r.label, r.seed, r.sigma2_v, r.sigma2_a, r.ratio)?;
        }
        for (name, s) in [("sigma2_V", self.sigma2_v), ("sigma2_A", self.sigma2_a), ("V/A", self.ratio)] {
            writeln!(f, "cross-seed {name:<9} {:.3}..{:.3} (range {:.3})", s.min, s.max, s.range)?;
        }
        for d in &self.profile_distances {
            writeln!(f, "profile distance {} vs {} (seed {}): {:.4}", d.a, d.b, d.seed, d.delta)?;
        }
        Ok(())
    }
}

/// `max(|sigma2_V(a) - sigma2_V(b)|, |sigma2_A(a) - sigma2_A(b)|)`.
pub fn compare_sigma_profiles(a: &SigmaEntry, b: &SigmaEntry) -> Result<f64> {
    a.require_uncertainty()?;
    b.require_uncertainty()?;
    let (av, aa) = a.sigma2();
    let (bv, ba) = b.sigma2();
    Ok((av - bv).abs().max((aa - ba).abs()))
}

/// Relative joint-RMSE change `(with - without) / without`; negative means
/// the uncertainty-weighted run did better.
pub fn ablation_compare(with: &MetricsReport, without: &MetricsReport) -> Result<f64> {
    if with.n != without.n {
        return Err(Error::Shape(format!("ablation over {} vs {} instances", with.n, without.n)));
    }
    if without.joint_rmse == 0.0 {
        return Err(Error::Degenerate("baseline RMSE is zero".into()));
    }
    Ok((with.joint_rmse - without.joint_rmse) / without.joint_rmse)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub name: String,
    pub pcc_v: f64,
    pub pcc_a: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
    pub average: GapRow,
}

pub fn va_gap_report(reports: &[(String, MetricsReport)]) -> Result<GapTable> {
    if reports.is_empty() {
        return Err(Error::invalid("gap report over zero reports"));
    }
    let rows = reports
        .iter()
        .map(|(name, r)| match (r.pcc_v, r.pcc_a) {
            (Some(v), Some(a)) => Ok(GapRow {
                name: name.clone(),
                pcc_v: v,
                pcc_a: a,
                gap: v - a,
            }),
            _ => Err(Error::Degenerate(format!("report {name} has no PCC"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let avg = |f: fn(&GapRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let average = GapRow {
        name: "average".into(),
        pcc_v: avg(|r| r.pcc_v),
        pcc_a: avg(|r| r.pcc_a),
        gap: avg(|r| r.gap),
    };
    Ok(GapTable { rows, average })
}

impl fmt::Display for GapTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>7} {:>7} {:>7}", "dataset", "pcc_V", "pcc_A", "gap")?;
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            writeln!(f, "{:<24} {:>7.3} {:>7.3} {:>+7.3}", r.name, r.pcc_v, r.pcc_a, r.gap)?;
        }
        Ok(())
    }
}
