//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 3 when
//! training hits a non-finite value. Tables and data go to stdout,
//! diagnostics to stderr.

mod config;
mod summary;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    dataset_stats, generate_synthetic, load_dataset, read_predictions, save_dataset, split_dataset, write_predictions,
    Dataset, Prediction, SynthSpec,
};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::metrics::{ensemble_mean, ensemble_mean_values, MetricsReport};
use crate::model::{load_model, save_model, LossMode, Model};
use crate::trainer::{predict, run_seeds, RunArtifacts};

pub use config::{file_fingerprint, ExperimentConfig, Paths, ReportOptions};
pub use summary::{ExperimentSummary, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vareg", version, about = "Valence/arousal regression with learned task weighting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus.
    Gen(GenArgs),
    /// Train one model per seed and ensemble them.
    Train(TrainArgs),
    /// Predict with a saved checkpoint.
    Predict(PredictArgs),
    /// Average several models' predictions.
    Ensemble(EnsembleArgs),
    /// Score a prediction file against gold labels.
    Eval(EvalArgs),
    /// Summarize finished training runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Also hold out a dev split, written here.
    #[arg(long, requires = "dev_fraction")]
    pub dev_out: Option<PathBuf>,
    #[arg(long, requires = "dev_out")]
    pub dev_fraction: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 5)]
    pub min_tokens: usize,
    #[arg(long, default_value_t = 15)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub valence_noise: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub arousal_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub loss_mode: Option<LossMode>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub model_lr: Option<f64>,
    #[arg(long)]
    pub sigma_lr: Option<f64>,
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Checkpoints to run on `--data`; raw outputs are averaged.
    #[arg(long, num_args = 1.., conflicts_with = "predictions", requires = "data")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Existing prediction files; their two-decimal values are averaged.
    #[arg(long, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Write the metrics as a JSON line here.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directories of `train`.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Compare uncertainty-weighted against fixed-weight experiments.
    #[arg(long)]
    pub ablate: bool,
    /// Write the report rows as JSON lines here.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let mut out = std::io::stdout().lock();
    match execute(cli.command, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

pub fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(&a, out),
        Command::Train(a) => cmd_train(&a, out).map(|_| ()),
        Command::Predict(a) => cmd_predict(&a),
        Command::Ensemble(a) => cmd_ensemble(&a),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| ()),
        Command::Report(a) => cmd_report(&a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::invalid(e.to_string()))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut body = String::new();
    for r in rows {
        body.push_str(&to_json(r)?);
        body.push('\n');
    }
    atomic_write(path, body.as_bytes())
}

fn write_prediction_set(path: &Path, preds: &[Prediction]) -> Result<()> {
    let ids: Vec<String> = preds.iter().map(|p| p.id.clone()).collect();
    let values: Vec<(f64, f64)> = preds.iter().map(|p| (p.valence, p.arousal)).collect();
    write_predictions(path, &ids, &values)
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec {
        vocab_size: a.vocab_size,
        tokens_per_text: (a.min_tokens, a.max_tokens),
        valence_noise_sd: a.valence_noise,
        arousal_noise_sd: a.arousal_noise,
        n_instances: a.n,
        seed: a.seed,
    };
    let mut ds = generate_synthetic(&spec)?;
    ds.name = stem(&a.out);
    match (&a.dev_out, a.dev_fraction) {
        (Some(dev_out), Some(frac)) => {
            let (train, dev) = split_dataset(&ds, frac, a.seed)?;
            save_dataset(&a.out, &train)?;
            save_dataset(dev_out, &dev)?;
            emit(out, format_args!("{}: {}\n{}: {}\n", a.out.display(), stats_line(&train)?, dev_out.display(), stats_line(&dev)?))
        }
        _ => {
            save_dataset(&a.out, &ds)?;
            emit(out, format_args!("{}: {}\n", a.out.display(), stats_line(&ds)?))
        }
    }
}

fn stats_line(ds: &Dataset) -> Result<String> {
    let s = dataset_stats(ds)?;
    Ok(format!(
        "n={} valence {:.3} (sd {:.3}) arousal {:.3} (sd {:.3})",
        s.count, s.mean_valence, s.sd_valence, s.mean_arousal, s.sd_arousal
    ))
}

fn stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run_dir(output_dir: &Path, config_hash: &str, seed: u64) -> PathBuf {
    output_dir.join(format!("run-{config_hash}-seed{seed}"))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<ExperimentSummary> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(d) = &a.output_dir {
        cfg.paths.output_dir = d.clone();
    }
    if let Some(m) = a.loss_mode {
        cfg.train.model.loss_mode = m;
    }
    if let Some(p) = a.patience {
        cfg.train.patience = p;
    }
    if let Some(e) = a.max_epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(lr) = a.model_lr {
        cfg.train.optimizer.model_lr = lr;
    }
    if let Some(lr) = a.sigma_lr {
        cfg.train.optimizer.sigma_lr = lr;
    }
    if let Some(l) = &a.label {
        cfg.report.label = Some(l.clone());
    }
    train_experiment(&cfg, out)
}

/// Trains every seed of `cfg`, writes all artifacts and returns the summary.
pub fn train_experiment(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let train_ds = load_dataset(&cfg.paths.train, true)?;
    let dev_ds = load_dataset(&cfg.paths.dev, true)?;
    let test_ds = cfg.paths.test.as_deref().map(|p| load_dataset(p, false)).transpose()?;
    let hash = cfg.config_hash()?;
    let dev_fingerprint = file_fingerprint(&cfg.paths.dev)?;
    let label = cfg.label().to_string();

    let runs = run_seeds(&cfg.train, &cfg.seeds, &train_ds, &dev_ds)?;

    let out_dir = &cfg.paths.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut run_summaries = Vec::with_capacity(runs.len());
    let mut dev_sets = Vec::with_capacity(runs.len());
    let mut test_sets = Vec::new();
    for run in &runs {
        let dir = run_dir(out_dir, &hash, run.seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let dev_preds = predict(&run.best, &dev_ds)?;
        let summary = write_run(&dir, run, &label, &hash, &dev_fingerprint, &dev_preds)?;
        if let Some(test) = &test_ds {
            let preds = predict(&run.best, test)?;
            write_prediction_set(&dir.join("test_predictions.tsv"), &preds)?;
            test_sets.push(preds);
        }
        dev_sets.push(dev_preds);
        run_summaries.push(summary);
    }

    let dev_ensemble = ensemble_mean(&dev_sets)?;
    write_prediction_set(&out_dir.join(format!("ensemble-{hash}-dev.tsv")), &dev_ensemble)?;
    if !test_sets.is_empty() {
        write_prediction_set(&out_dir.join(format!("ensemble-{hash}-test.tsv")), &ensemble_mean(&test_sets)?)?;
    }
    let ens_values: Vec<(f64, f64)> = dev_ensemble.iter().map(|p| (p.valence, p.arousal)).collect();
    let ensemble_dev = MetricsReport::compute(&ens_values, &dev_ds.gold()?)?;

    let summary = ExperimentSummary::new(label, hash.clone(), dev_fingerprint, cfg.train.clone(), run_summaries, ensemble_dev);
    atomic_write(&out_dir.join(format!("summary-{hash}.json")), (to_json(&summary)? + "\n").as_bytes())?;
    emit(out, &summary)?;
    Ok(summary)
}

fn write_run(
    dir: &Path,
    run: &RunArtifacts,
    label: &str,
    hash: &str,
    dev_fingerprint: &str,
    dev_preds: &[Prediction],
) -> Result<RunSummary> {
    save_model(&dir.join("checkpoint.txt"), &run.best)?;
    write_jsonl(&dir.join("history.jsonl"), &run.history)?;
    write_jsonl(&dir.join("sigma.jsonl"), &run.sigma_trajectory)?;
    write_prediction_set(&dir.join("dev_predictions.tsv"), dev_preds)?;
    let summary = RunSummary::from_run(run, label, hash, dev_fingerprint);
    atomic_write(&dir.join("run.json"), (to_json(&summary)? + "\n").as_bytes())?;
    Ok(summary)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let ds = load_dataset(&a.data, false)?;
    let preds = predict(&model, &ds)?;
    write_prediction_set(&a.out, &preds)
}

pub fn cmd_ensemble(a: &EnsembleArgs) -> Result<()> {
    if !a.checkpoints.is_empty() {
        let data = a.data.as_deref().ok_or_else(|| Error::Config("--checkpoints needs --data".into()))?;
        let ds = load_dataset(data, false)?;
        let models = a.checkpoints.iter().map(|p| load_model(p)).collect::<Result<Vec<Model>>>()?;
        let sets = models
            .iter()
            .map(|m| predict(m, &ds).map(|ps| ps.iter().map(|p| (p.valence, p.arousal)).collect()))
            .collect::<Result<Vec<Vec<(f64, f64)>>>>()?;
        let mean = ensemble_mean_values(&sets)?;
        let ids: Vec<String> = ds.instances.iter().map(|i| i.id.clone()).collect();
        write_predictions(&a.out, &ids, &mean)
    } else if !a.predictions.is_empty() {
        let sets = a.predictions.iter().map(|p| read_predictions(p)).collect::<Result<Vec<_>>>()?;
        write_prediction_set(&a.out, &ensemble_mean(&sets)?)
    } else {
        Err(Error::Config("ensemble needs --checkpoints with --data, or --predictions".into()))
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<MetricsReport> {
    let gold = load_dataset(&a.gold, true)?;
    let preds = read_predictions(&a.pred)?;
    if preds.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} has {} predictions but {} has {} instances",
            a.pred.display(),
            preds.len(),
            a.gold.display(),
            gold.len()
        )));
    }
    for (i, (p, g)) in preds.iter().zip(&gold.instances).enumerate() {
        if p.id != g.id {
            return Err(Error::Shape(format!("line {}: prediction id {:?} but gold id {:?}", i + 1, p.id, g.id)));
        }
    }
    let values: Vec<(f64, f64)> = preds.iter().map(|p| (p.valence, p.arousal)).collect();
    let report = MetricsReport::compute(&values, &gold.gold()?)?;
    if let Some(path) = &a.record {
        write_jsonl(path, std::slice::from_ref(&report))?;
    }
    emit(out, &report)?;
    Ok(report)
}

pub fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let mut experiments = Vec::new();
    for dir in &a.dirs {
        experiments.extend(summary::load_summaries(dir)?);
    }
    if experiments.is_empty() {
        return Err(Error::Config("no experiment summaries found".into()));
    }
    let report = summary::build_report(&experiments, a.ablate)?;
    if let Some(path) = &a.records {
        write_jsonl(path, &report.records()?)?;
    }
    emit(out, &report)
}
