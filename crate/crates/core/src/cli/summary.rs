//! On-disk run summaries and the cross-experiment report built from them.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ablation_compare, sigma_report, va_gap_report, GapRow, GapTable, MetricsReport, SigmaEntry, SigmaReport, SigmaRow};
use crate::model::LossMode;
use crate::trainer::{RunArtifacts, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub config_hash: String,
    pub dev_fingerprint: String,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub dev: MetricsReport,
    pub logvar_v: f64,
    pub logvar_a: f64,
}

impl RunSummary {
    pub fn from_run(run: &RunArtifacts, label: &str, config_hash: &str, dev_fingerprint: &str) -> Self {
        RunSummary {
            label: label.to_string(),
            seed: run.seed,
            loss_mode: run.config.loss_mode(),
            config_hash: config_hash.to_string(),
            dev_fingerprint: dev_fingerprint.to_string(),
            best_epoch: run.best_epoch,
            stopped_epoch: run.stopped_epoch,
            dev: run.best_dev().clone(),
            logvar_v: run.best.params.logvar_v,
            logvar_a: run.best.params.logvar_a,
        }
    }

    pub fn sigma_entry(&self) -> SigmaEntry {
        SigmaEntry {
            label: self.label.clone(),
            seed: self.seed,
            loss_mode: self.loss_mode,
            logvar_v: self.logvar_v,
            logvar_a: self.logvar_a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub loss_mode: LossMode,
    pub config_hash: String,
    pub dev_fingerprint: String,
    pub train: TrainConfig,
    pub runs: Vec<RunSummary>,
    pub ensemble_dev: MetricsReport,
    pub mean_seed_joint_rmse: f64,
    pub best_seed_joint_rmse: f64,
}

impl ExperimentSummary {
    pub fn new(
        label: String,
        config_hash: String,
        dev_fingerprint: String,
        train: TrainConfig,
        runs: Vec<RunSummary>,
        ensemble_dev: MetricsReport,
    ) -> Self {
        let rmses: Vec<f64> = runs.iter().map(|r| r.dev.joint_rmse).collect();
        ExperimentSummary {
            label,
            loss_mode: train.loss_mode(),
            config_hash,
            dev_fingerprint,
            mean_seed_joint_rmse: rmses.iter().sum::<f64>() / rmses.len() as f64,
            best_seed_joint_rmse: rmses.iter().copied().fold(f64::INFINITY, f64::min),
            train,
            runs,
            ensemble_dev,
        }
    }
}

impl fmt::Display for ExperimentSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({} loss, config {})", self.label, self.loss_mode, self.config_hash)?;
        writeln!(f, "{:>8} {:>6} {:>6} {:>10} {:>9} {:>9}", "seed", "best", "stop", "dev_rmse", "sigma2_V", "sigma2_A")?;
        for r in &self.runs {
            writeln!(
                f,
                "{:>8} {:>6} {:>6} {:>10.4} {:>9.3} {:>9.3}",
                r.seed,
                r.best_epoch,
                r.stopped_epoch,
                r.dev.joint_rmse,
                r.logvar_v.exp(),
                r.logvar_a.exp()
            )?;
        }
        writeln!(f, "mean over seeds {:.4}, best seed {:.4}", self.mean_seed_joint_rmse, self.best_seed_joint_rmse)?;
        writeln!(f, "ensemble on dev:")?;
        write!(f, "{}", self.ensemble_dev)
    }
}

/// All `summary-*.json` files directly under `dir`, in file name order.
pub fn load_summaries(dir: &Path) -> Result<Vec<ExperimentSummary>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name.starts_with("summary-") && name.ends_with(".json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let body = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&body).map_err(|e| Error::Record {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub with: String,
    pub without: String,
    pub dev_fingerprint: String,
    pub joint_rmse_with: f64,
    pub joint_rmse_without: f64,
    /// Relative ensemble joint-RMSE change; negative favors the weighted loss.
    pub delta: f64,
    /// Seeds present in both experiments, and how many of them the weighted loss won.
    pub paired_seeds: usize,
    pub seed_wins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub sigma: Option<SigmaReport>,
    pub gap: Option<GapTable>,
    pub ablation: Vec<AblationRow>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record<'a> {
    Sigma(&'a SigmaRow),
    Gap(&'a GapRow),
    Ablation(&'a AblationRow),
}

impl Report {
    pub fn records(&self) -> Result<Vec<serde_json::Value>> {
        let mut rows = Vec::new();
        if let Some(s) = &self.sigma {
            rows.extend(s.rows.iter().map(Record::Sigma));
        }
        if let Some(g) = &self.gap {
            rows.extend(g.rows.iter().chain(std::iter::once(&g.average)).map(Record::Gap));
        }
        rows.extend(self.ablation.iter().map(Record::Ablation));
        rows.iter()
            .map(|r| serde_json::to_value(r).map_err(|e| Error::invalid(e.to_string())))
            .collect()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = &self.sigma {
            writeln!(f, "learned task variances")?;
            writeln!(f, "{s}")?;
        }
        if let Some(g) = &self.gap {
            writeln!(f, "valence/arousal correlation gap (ensemble, dev)")?;
            writeln!(f, "{g}")?;
        }
        if !self.ablation.is_empty() {
            writeln!(f, "ablation (ensemble dev joint RMSE)")?;
            writeln!(f, "{:<20} {:<20} {:>9} {:>9} {:>8} {:>6}", "weighted", "fixed", "rmse_w", "rmse_f", "delta", "wins")?;
            for a in &self.ablation {
                writeln!(
                    f,
                    "{:<20} {:<20} {:>9.4} {:>9.4} {:>+7.2}% {:>3}/{}",
                    a.with,
                    a.without,
                    a.joint_rmse_with,
                    a.joint_rmse_without,
                    100.0 * a.delta,
                    a.seed_wins,
                    a.paired_seeds
                )?;
            }
        }
        Ok(())
    }
}

pub fn build_report(experiments: &[ExperimentSummary], ablate: bool) -> Result<Report> {
    let entries: Vec<SigmaEntry> = experiments
        .iter()
        .filter(|e| e.loss_mode == LossMode::Uncertainty)
        .flat_map(|e| e.runs.iter().map(RunSummary::sigma_entry))
        .collect();
    let sigma = if entries.is_empty() { None } else { Some(sigma_report(&entries)?) };

    let named: Vec<(String, MetricsReport)> = experiments
        .iter()
        .filter(|e| e.ensemble_dev.gap.is_some())
        .map(|e| (format!("{} [{}]", e.label, e.loss_mode), e.ensemble_dev.clone()))
        .collect();
    let gap = if named.is_empty() { None } else { Some(va_gap_report(&named)?) };

    let mut ablation = Vec::new();
    if ablate {
        for w in experiments.iter().filter(|e| e.loss_mode == LossMode::Uncertainty) {
            for wo in experiments
                .iter()
                .filter(|e| e.loss_mode == LossMode::Fixed && e.dev_fingerprint == w.dev_fingerprint)
            {
                let mut paired = 0;
                let mut wins = 0;
                for r in &w.runs {
                    if let Some(o) = wo.runs.iter().find(|o| o.seed == r.seed) {
                        paired += 1;
                        if r.dev.joint_rmse <= o.dev.joint_rmse {
                            wins += 1;
                        }
                    }
                }
                ablation.push(AblationRow {
                    with: w.label.clone(),
                    without: wo.label.clone(),
                    dev_fingerprint: w.dev_fingerprint.clone(),
                    joint_rmse_with: w.ensemble_dev.joint_rmse,
                    joint_rmse_without: wo.ensemble_dev.joint_rmse,
                    delta: ablation_compare(&w.ensemble_dev, &wo.ensemble_dev)?,
                    paired_seeds: paired,
                    seed_wins: wins,
                });
            }
        }
        if ablation.is_empty() {
            return Err(Error::Config(
                "--ablate needs an uncertainty-loss and a fixed-loss experiment on the same dev data".into(),
            ));
        }
    }
    Ok(Report { sigma, gap, ablation })
}
