use std::path::{Path, PathBuf};

use clap::Args;
use interrupt_core::eval::{
    mean_sd, per_class_report, roc_auc, roc_curve, thresholded_confusion, tpr_at_fpr, OperatingPoint, ScoredSample,
    ThresholdedConfusion,
};
use interrupt_core::features::{load_features, FeatureProfile};
use interrupt_core::manifest::{read_jsonl, resolve, ClipRecord};
use interrupt_core::model::{load_checkpoint, save_checkpoint, train as fit, Example, InterruptionModel, TrainConfig};
use interrupt_core::{Class, Error, Result};
use serde::Serialize;

use crate::output::{prepare_out, require_file, write_json, Csv};
use crate::{ChannelsArg, FeatureArgs};

const MODEL_FILE: &str = "model.imc";

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Labeled feature manifest from `featurize`.
    #[arg(long)]
    pub train: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long, value_enum, default_value = "2")]
    pub channels: ChannelsArg,
    /// Independent runs; run `r` uses seed `seed + r`.
    #[arg(long, default_value_t = 1)]
    pub runs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0015)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub max_epochs: usize,
    /// Early-stopping patience in epochs; 0 disables early stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn run_dir(out: &Path, run: u64) -> PathBuf {
    out.join(format!("run_{run:03}"))
}

/// Loads every record of a labeled manifest, sorted by clip id.
fn load_examples(manifest: &Path, profile: FeatureProfile) -> Result<Vec<Example>> {
    require_file(manifest)?;
    let mut records: Vec<ClipRecord> = read_jsonl(manifest)?;
    records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let mut labeled = Vec::with_capacity(records.len());
    for rec in &records {
        let label = rec
            .label
            .ok_or_else(|| Error::InvalidInput(format!("clip {} has no label", rec.clip_id)))?
            .class()
            .ok_or_else(|| Error::InvalidInput(format!("clip {} has label `other`, which has no class", rec.clip_id)))?;
        let path = resolve(manifest, &rec.embedding_path());
        require_file(&path)?;
        labeled.push((rec.clip_id.clone(), label, path));
    }
    labeled
        .into_iter()
        .map(|(id, label, path)| Ok(Example { id, input: load_features(&path, profile)?, label }))
        .collect()
}

pub fn train(args: &TrainArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(Error::InvalidInput("--runs must be at least 1".into()));
    }
    let profile = args.features.feature_profile();
    let examples = load_examples(&args.train, profile)?;
    prepare_out(&args.out, "train", args)?;

    let mut runs = Csv::create(
        &args.out.join("runs.csv"),
        &["run", "seed", "best_epoch", "epochs", "steps", "train_examples", "val_examples"],
    )?;
    for run in 0..args.runs {
        let config = TrainConfig {
            learning_rate: args.lr,
            batch_size: args.batch_size,
            max_epochs: args.max_epochs,
            patience: (args.patience > 0).then_some(args.patience),
            channel_mode: args.channels.into(),
            seed: args.seed.wrapping_add(run),
            ..TrainConfig::default()
        };
        let (model, report) = fit(&examples, Some(profile), &config)?;
        let dir = run_dir(&args.out, run);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        save_checkpoint(dir.join(MODEL_FILE), &model)?;
        let mut curve = Csv::create(&dir.join("loss.csv"), &["epoch", "train_loss", "val_loss"])?;
        for e in &report.curve {
            curve.row([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.map_or(String::new(), |v| v.to_string())])?;
        }
        curve.finish()?;
        runs.row([
            run.to_string(),
            config.seed.to_string(),
            report.best_epoch.to_string(),
            report.curve.len().to_string(),
            report.steps.to_string(),
            report.train_examples.to_string(),
            report.val_examples.to_string(),
        ])?;
        log::info!("run {run}: best epoch {} of {}", report.best_epoch, report.curve.len());
    }
    runs.finish()?;
    println!("trained {} run(s) on {} examples ({profile})", args.runs, examples.len());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Output directory of `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled feature manifest to score.
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long, default_value_t = 0.01)]
    pub fpr_target: f64,
    #[arg(long, default_value = "failed_interruption")]
    pub positive: Class,
    /// Labeled manifest used to pick the threshold; defaults to the test set itself.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn run_checkpoints(model_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(model_dir).map_err(|e| Error::io(model_dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("run_")))
        .map(|p| p.join(MODEL_FILE))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::io(
            model_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no run_*/model.imc checkpoints"),
        ));
    }
    Ok(found)
}

fn score(model: &InterruptionModel, examples: &[Example]) -> Result<Vec<ScoredSample>> {
    examples.iter().map(|ex| ScoredSample::new(ex.id.clone(), ex.label, model.forward(&ex.input)?)).collect()
}

#[derive(Serialize)]
struct RunMetrics {
    run: String,
    auc: f64,
    tpr: f64,
    fpr: f64,
    threshold: f64,
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.fpr_target) {
        return Err(Error::InvalidInput(format!("--fpr-target {} outside [0, 1]", args.fpr_target)));
    }
    let profile = args.features.feature_profile();
    let checkpoints = run_checkpoints(&args.model)?;
    let models = checkpoints.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
    for m in &models {
        if m.profile != Some(profile) {
            return Err(Error::ProfileMismatch { expected: m.profile_name(), found: profile.to_string() });
        }
    }
    let examples = load_examples(&args.test, profile)?;
    let calibration = args.calibration.as_deref().map(|p| load_examples(p, profile)).transpose()?;
    prepare_out(&args.out, "eval", args)?;

    let class_names: Vec<&str> = Class::ALL.iter().map(|c| c.as_str()).collect();
    let mut score_header = vec!["run", "clip_id", "true_label"];
    score_header.extend(class_names.iter().copied());
    let mut scores = Csv::create(&args.out.join("scores.csv"), &score_header)?;
    let mut roc = Csv::create(&args.out.join("roc.csv"), &["run", "fpr", "tpr", "threshold"])?;
    let mut conf_header = vec!["run", "true_label"];
    conf_header.extend(class_names.iter().copied());
    conf_header.push("below_threshold");
    let mut confusion = Csv::create(&args.out.join("confusion.csv"), &conf_header)?;
    let mut per_class = Csv::create(&args.out.join("per_class.csv"), &["run", "class", "precision", "recall", "support"])?;

    let mut metrics = Vec::with_capacity(models.len());
    for (run, model) in models.iter().enumerate() {
        let run_name = checkpoints[run]
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| run.to_string(), |n| n.to_string_lossy().into_owned());
        let samples = score(model, &examples)?;
        for s in &samples {
            let mut row = vec![run_name.clone(), s.clip_id.clone(), s.true_label.to_string()];
            row.extend(s.probs.iter().map(f64::to_string));
            scores.row(row)?;
        }
        for p in roc_curve(&samples, args.positive)? {
            roc.row([run_name.clone(), p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
        }
        let op = match &calibration {
            None => tpr_at_fpr(&samples, args.positive, args.fpr_target)?,
            Some(cal) => {
                let tau = tpr_at_fpr(&score(model, cal)?, args.positive, args.fpr_target)?.threshold;
                let table = thresholded_confusion(&samples, args.positive, tau);
                let pos = table.row_sum(args.positive);
                OperatingPoint {
                    tpr: if pos == 0 { 0.0 } else { table.counts[args.positive.index()][args.positive.index()] as f64 / pos as f64 },
                    fpr: table.positive_fpr(),
                    threshold: tau,
                }
            }
        };
        let table: ThresholdedConfusion = thresholded_confusion(&samples, args.positive, op.threshold);
        for class in Class::ALL {
            let mut row = vec![run_name.clone(), class.to_string()];
            row.extend(table.counts[class.index()].iter().map(usize::to_string));
            confusion.row(row)?;
        }
        for r in per_class_report(&table) {
            per_class.row([
                run_name.clone(),
                r.class.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.support.to_string(),
            ])?;
        }
        metrics.push(RunMetrics {
            run: run_name,
            auc: roc_auc(&samples, args.positive)?,
            tpr: op.tpr,
            fpr: op.fpr,
            threshold: op.threshold,
        });
    }
    scores.finish()?;
    roc.finish()?;
    confusion.finish()?;
    per_class.finish()?;

    let mut table = Csv::create(&args.out.join("metrics.csv"), &["run", "auc", "tpr_at_fpr", "fpr", "threshold"])?;
    for m in &metrics {
        table.row([m.run.clone(), m.auc.to_string(), m.tpr.to_string(), m.fpr.to_string(), m.threshold.to_string()])?;
    }
    let column = |f: fn(&RunMetrics) -> f64| mean_sd(&metrics.iter().map(f).collect::<Vec<_>>());
    let cols = [column(|m| m.auc), column(|m| m.tpr), column(|m| m.fpr), column(|m| m.threshold)];
    table.row(std::iter::once("mean".to_string()).chain(cols.iter().map(|c| c.0.to_string())))?;
    table.row(std::iter::once("sd".to_string()).chain(cols.iter().map(|c| c.1.to_string())))?;
    table.finish()?;
    write_json(&args.out.join("metrics.json"), &metrics)?;

    println!(
        "{} run(s), {} examples, positive={}: auc={:.4} tpr@{}fpr={:.4}",
        metrics.len(),
        examples.len(),
        args.positive,
        cols[0].0,
        args.fpr_target,
        cols[1].0
    );
    Ok(())
}
