use std::fs;
use std::path::Path;

use kdforge_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use kdforge_core::data::{load_examples, load_lexicon, LabeledExample};
use kdforge_core::metrics::{evaluate_classification, evaluate_regression, MetricsReport};
use kdforge_core::rng::streams;
use kdforge_core::train::{encode_examples, finetune as run_finetune, predict, FinetuneConfig, FinetuneOutcome};
use kdforge_core::{Error, HeadKind, Result, RngState, TaskHeadSpec};
use serde_json::Value;

use super::{
    ensure_dir, print_row, print_table_header, require_file, write_json, FINETUNED_CHECKPOINT, FINETUNE_LOG,
    METRICS_FILE, VALIDATION_METRICS_FILE,
};
use crate::args::{EvaluateArgs, FinetuneArgs, GlueArgs, GlueTask, TaskTrainArgs};

/// Hyperparameters used when the matching flag is absent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskDefaults {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_len: usize,
    pub warmup_steps: u64,
    pub augment_rate: f64,
}

impl Default for TaskDefaults {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 8,
            epochs: 10,
            weight_decay: 1e-2,
            patience: 3,
            max_len: 512,
            warmup_steps: 0,
            augment_rate: 0.1,
        }
    }
}

pub fn glue_defaults(task: GlueTask) -> TaskDefaults {
    let base = TaskDefaults {
        max_len: 128,
        ..TaskDefaults::default()
    };
    match task {
        GlueTask::Mrpc => TaskDefaults {
            learning_rate: 5e-5,
            epochs: 2,
            ..base
        },
        GlueTask::Sst2 | GlueTask::Cola => base,
        GlueTask::Qqp => TaskDefaults {
            batch_size: 16,
            epochs: 3,
            warmup_steps: 500,
            ..base
        },
        GlueTask::Mnli => TaskDefaults {
            learning_rate: 5e-5,
            epochs: 3,
            ..base
        },
        // Batch size 8: the larger figure sometimes quoted cannot fit a
        // training set of this size.
        GlueTask::Stsb => TaskDefaults {
            learning_rate: 5e-5,
            epochs: 6,
            ..base
        },
    }
}

fn glue_head(task: GlueTask) -> HeadChoice {
    match task {
        GlueTask::Mnli => HeadChoice::Classes(3),
        GlueTask::Stsb => HeadChoice::Regression,
        _ => HeadChoice::Classes(2),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum HeadChoice {
    Infer,
    Classes(usize),
    Regression,
}

fn resolve_head(choice: HeadChoice, train: &[LabeledExample], val: &[LabeledExample]) -> Result<TaskHeadSpec> {
    match choice {
        HeadChoice::Regression => Ok(TaskHeadSpec::regression()),
        HeadChoice::Classes(n) => Ok(TaskHeadSpec::classification(n)),
        HeadChoice::Infer => {
            let mut max = 0;
            for ex in train.iter().chain(val) {
                max = max.max(ex.label.class()?);
            }
            Ok(TaskHeadSpec::classification((max + 1).max(2)))
        }
    }
}

fn resolve_config(t: &TaskTrainArgs, d: TaskDefaults, seed: u64) -> FinetuneConfig {
    FinetuneConfig {
        learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
        batch_size: t.batch_size.unwrap_or(d.batch_size),
        epochs: t.epochs.unwrap_or(d.epochs),
        weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
        patience: t.patience.unwrap_or(d.patience),
        max_len: t.max_len.unwrap_or(d.max_len),
        warmup_steps: t.warmup_steps.unwrap_or(d.warmup_steps),
        seed,
        augment_rate: if t.augment_lexicon.is_some() {
            t.augment_rate.unwrap_or(d.augment_rate)
        } else {
            0.0
        },
    }
}

fn fit_max_len(requested: usize, positions: usize) -> usize {
    if requested > positions {
        println!("note: max_len {requested} reduced to the model's {positions} positions");
    }
    requested.min(positions)
}

fn run_task_training(
    model: &Path,
    t: &TaskTrainArgs,
    head: HeadChoice,
    mut config: FinetuneConfig,
    out_dir: &Path,
    title: &str,
) -> Result<(FinetuneOutcome, Checkpoint)> {
    require_file(model)?;
    require_file(&t.train)?;
    require_file(&t.validation)?;
    config.validate()?;
    let base = load_checkpoint(model)?;
    let vocab = base
        .vocabulary()?
        .ok_or_else(|| Error::Compatibility("model checkpoint carries no vocabulary".into()))?;
    let train = load_examples(&t.train)?;
    let val = load_examples(&t.validation)?;
    if train.is_empty() {
        return Err(Error::Input(format!("{}: empty training set", t.train.display())));
    }
    let spec = resolve_head(head, &train, &val)?;
    let lexicon = t.augment_lexicon.as_ref().map(load_lexicon).transpose()?;
    config.max_len = fit_max_len(config.max_len, base.params.config.max_position_embeddings);

    let mut params = base.params;
    params.mlm = None;
    if params.task_spec() != Some(spec) {
        params.attach_task_head(spec, &mut RngState::new(config.seed).fork(streams::INIT))?;
    }
    println!(
        "{title}: head={:?}x{} lr={:e} batch={} epochs={} weight_decay={:?} patience={} max_len={} warmup_steps={} seed={}",
        spec.kind,
        spec.num_labels,
        config.learning_rate,
        config.batch_size,
        config.epochs,
        config.weight_decay,
        config.patience,
        config.max_len,
        config.warmup_steps,
        config.seed
    );
    print_table_header();
    let outcome = run_finetune(params, &vocab, &train, &val, &config, lexicon.as_ref(), print_row)?;
    if outcome.stopped_early {
        println!(
            "early stop after {} evaluations; restoring epoch {}",
            outcome.evaluations, outcome.best_epoch
        );
    }

    ensure_dir(out_dir)?;
    outcome.log.write_csv(out_dir.join(FINETUNE_LOG))?;
    write_json(&out_dir.join(VALIDATION_METRICS_FILE), &outcome.report)?;
    let mut checkpoint = Checkpoint::new(outcome.params.clone(), Some(&vocab));
    checkpoint.meta.epoch = outcome.best_epoch;
    checkpoint.meta.best_metric = Some(outcome.best_val_loss);
    checkpoint.meta.rng.insert("root".into(), RngState::new(config.seed).snapshot());
    save_checkpoint(out_dir.join(FINETUNED_CHECKPOINT), &checkpoint)?;
    println!("saved {}", out_dir.join(FINETUNED_CHECKPOINT).display());
    Ok((outcome, checkpoint))
}

pub fn finetune(args: &FinetuneArgs) -> Result<()> {
    let head = match (args.regression, args.num_labels) {
        (true, _) => HeadChoice::Regression,
        (false, Some(n)) => HeadChoice::Classes(n),
        (false, None) => HeadChoice::Infer,
    };
    let config = resolve_config(&args.task, TaskDefaults::default(), args.common.seed);
    run_task_training(&args.model, &args.task, head, config, &args.common.out_dir, "finetune").map(|_| ())
}

/// Stored model outputs, one JSON value per line.
enum Predictions {
    Probabilities(Vec<Vec<f64>>),
    Values(Vec<f64>),
}

fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut probs = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Input(format!("{}:{}: expected a number or an array of numbers", path.display(), i + 1));
        match serde_json::from_str::<Value>(line)? {
            Value::Number(n) => values.push(n.as_f64().ok_or_else(bad)?),
            Value::Array(a) => probs.push(a.iter().map(|v| v.as_f64().ok_or_else(bad)).collect::<Result<Vec<_>>>()?),
            _ => return Err(bad()),
        }
    }
    match (probs.is_empty(), values.is_empty()) {
        (false, true) => Ok(Predictions::Probabilities(probs)),
        (true, false) => Ok(Predictions::Values(values)),
        (true, true) => Err(Error::Input(format!("{}: no predictions", path.display()))),
        (false, false) => Err(Error::Input(format!("{}: mixes arrays and numbers", path.display()))),
    }
}

fn report_for(predictions: Predictions, examples: &[LabeledExample]) -> Result<MetricsReport> {
    let n = match &predictions {
        Predictions::Probabilities(p) => p.len(),
        Predictions::Values(v) => v.len(),
    };
    if n != examples.len() {
        return Err(Error::Input(format!("{n} predictions for {} examples", examples.len())));
    }
    match predictions {
        Predictions::Probabilities(p) => {
            let classes = p.first().map_or(0, Vec::len);
            let truth = examples
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let c = e.label.class()?;
                    if c >= classes {
                        return Err(Error::Label {
                            index: i,
                            label: c,
                            classes,
                        });
                    }
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_classification(&p, &truth, classes)
        }
        Predictions::Values(v) => {
            let targets: Vec<f64> = examples.iter().map(|e| e.label.score()).collect();
            evaluate_regression(&v, &targets)
        }
    }
}

fn model_predictions(checkpoint: &Checkpoint, examples: &[LabeledExample], batch: usize, max_len: usize) -> Result<Predictions> {
    let spec = checkpoint
        .params
        .task_spec()
        .ok_or_else(|| Error::Compatibility("checkpoint has no task head".into()))?;
    let vocab = checkpoint
        .vocabulary()?
        .ok_or_else(|| Error::Compatibility("checkpoint carries no vocabulary".into()))?;
    let max_len = fit_max_len(max_len, checkpoint.params.config.max_position_embeddings);
    let encoded = encode_examples(examples, &vocab, max_len, spec)?;
    let out = predict(&checkpoint.params, &encoded, batch)?;
    Ok(match spec.kind {
        HeadKind::Classification => Predictions::Probabilities(out),
        HeadKind::Regression => Predictions::Values(out.into_iter().map(|o| o[0]).collect()),
    })
}

fn print_report(r: &MetricsReport) {
    let mut parts = Vec::new();
    if let Some(a) = r.accuracy {
        parts.push(format!("accuracy {a:.4}"));
    }
    if let Some(w) = r.weighted {
        parts.push(format!(
            "weighted precision {:.4} recall {:.4} f1 {:.4}",
            w.precision, w.recall, w.f1
        ));
    }
    for (name, v) in [("mcc", r.mcc), ("auroc", r.auroc), ("pearson", r.pearson), ("spearman", r.spearman)] {
        if let Some(v) = v {
            parts.push(format!("{name} {v:.4}"));
        }
    }
    println!("{}", parts.join(", "));
}

pub fn evaluate(args: &EvaluateArgs) -> Result<MetricsReport> {
    if args.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    require_file(&args.test)?;
    let examples = load_examples(&args.test)?;
    if examples.is_empty() {
        return Err(Error::Input(format!("{}: no examples", args.test.display())));
    }
    let predictions = match (&args.model, &args.predictions) {
        (_, Some(p)) => read_predictions(p)?,
        (Some(m), None) => {
            require_file(m)?;
            model_predictions(&load_checkpoint(m)?, &examples, args.batch_size, args.max_len)?
        }
        (None, None) => return Err(Error::Config("either --model or --predictions is required".into())),
    };
    let mut report = report_for(predictions, &examples)?;
    if !args.roc {
        report.roc_points = None;
    }
    ensure_dir(&args.common.out_dir)?;
    write_json(&args.common.out_dir.join(METRICS_FILE), &report)?;
    print_report(&report);
    Ok(report)
}

/// Keeps the metric set reported for each task: accuracy and P/R/F1 for
/// classification, plus MCC on CoLA; correlations only for STS-B.
fn glue_report(task: GlueTask, mut r: MetricsReport) -> MetricsReport {
    r.auroc = None;
    r.roc_points = None;
    if task != GlueTask::Cola {
        r.mcc = None;
    }
    r
}

pub fn glue(args: &GlueArgs) -> Result<MetricsReport> {
    let defaults = glue_defaults(args.task);
    let config = resolve_config(&args.train, defaults, args.common.seed);
    let title = format!("glue {:?}", args.task).to_lowercase();
    let (_, checkpoint) = run_task_training(
        &args.model,
        &args.train,
        glue_head(args.task),
        config.clone(),
        &args.common.out_dir,
        &title,
    )?;
    let test = args.test.as_ref().unwrap_or(&args.train.validation);
    require_file(test)?;
    let examples = load_examples(test)?;
    let predictions = model_predictions(&checkpoint, &examples, config.batch_size, config.max_len)?;
    let report = glue_report(args.task, report_for(predictions, &examples)?);
    write_json(&args.common.out_dir.join(METRICS_FILE), &report)?;
    print_report(&report);
    Ok(report)
}
