use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diverged;
use super::log::{EpochLog, EpochRow};
use crate::data::{synonym_augment, LabeledExample, Lexicon};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_classification, evaluate_regression, MetricsReport};
use crate::model::{run_task, EncoderInput, EncoderParams, HeadKind, TaskHeadSpec};
use crate::optim::{
    adamw_step_model, lr_at_step, AdamWConfig, AdamWState, EarlyStopState, ScheduleConfig, StopDecision,
};
use crate::rng::{streams, RngState};
use crate::tensor::{softmax_rows, CrossEntropy, MeanSquaredError, Tensor};
use crate::tokenizer::{encode, TokenizedSequence, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_len: usize,
    pub warmup_steps: u64,
    pub seed: u64,
    /// Per-word synonym replacement probability; 0 disables augmentation.
    pub augment_rate: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 8,
            epochs: 10,
            weight_decay: 1e-2,
            patience: 3,
            max_len: 512,
            warmup_steps: 0,
            seed: 42,
            augment_rate: 0.0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, epochs, and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 || !(0.0..=1.0).contains(&self.augment_rate) {
            return Err(Error::Config(format!(
                "invalid learning_rate {}, weight_decay {}, or augment_rate {}",
                self.learning_rate, self.weight_decay, self.augment_rate
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub seq: TokenizedSequence,
    pub target: f64,
}

/// Tokenizes examples and checks labels against the head.
pub fn encode_examples(
    examples: &[LabeledExample],
    vocab: &Vocabulary,
    max_len: usize,
    head: TaskHeadSpec,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let target = match head.kind {
                HeadKind::Classification => {
                    let c = ex.label.class()?;
                    if c >= head.num_labels {
                        return Err(Error::Label {
                            index: i,
                            label: c,
                            classes: head.num_labels,
                        });
                    }
                    c as f64
                }
                HeadKind::Regression => ex.label.score(),
            };
            Ok(EncodedExample {
                seq: encode(&ex.text, ex.text_b.as_deref(), vocab, max_len)?,
                target,
            })
        })
        .collect()
}

fn batch_input(examples: &[&EncodedExample]) -> Result<EncoderInput> {
    let len = examples
        .iter()
        .map(|e| e.seq.valid_len().max(1))
        .max()
        .unwrap_or(1);
    let seqs: Vec<TokenizedSequence> = examples
        .iter()
        .map(|e| TokenizedSequence {
            ids: e.seq.ids[..len].to_vec(),
            attention_mask: e.seq.attention_mask[..len].to_vec(),
            type_ids: e.seq.type_ids[..len].to_vec(),
            overflow: e.seq.overflow,
        })
        .collect();
    EncoderInput::from_sequences(&seqs)
}

/// Loss and gradient of the head output for one batch.
fn head_loss(spec: TaskHeadSpec, logits: &Tensor<f32>, batch: &[&EncodedExample]) -> Result<(f64, Tensor<f32>)> {
    match spec.kind {
        HeadKind::Classification => {
            let targets: Vec<usize> = batch.iter().map(|e| e.target as usize).collect();
            let mut ce = CrossEntropy::new();
            let loss = ce.forward(logits, &targets)? as f64;
            Ok((loss, ce.backward(1.0)?))
        }
        HeadKind::Regression => {
            let targets: Vec<f32> = batch.iter().map(|e| e.target as f32).collect();
            let mut mse = MeanSquaredError::new();
            let loss = mse.forward(logits, &targets)? as f64;
            Ok((loss, mse.backward(1.0)?))
        }
    }
}

/// Eval-mode head outputs for every example: class probabilities, or the
/// single regression value. Batches run on the thread pool; order is kept.
pub fn predict(params: &EncoderParams<f32>, examples: &[EncodedExample], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let spec = params
        .task_spec()
        .ok_or_else(|| Error::Config("model has no task head".into()))?;
    let refs: Vec<&EncodedExample> = examples.iter().collect();
    let chunks: Vec<Result<Vec<Vec<f64>>>> = refs
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let input = batch_input(chunk)?;
            let mut idle = RngState::new(0);
            let logits = run_task(params, &input, &mut idle, false)?.into_logits();
            let out = match spec.kind {
                HeadKind::Classification => softmax_rows(&logits)?,
                HeadKind::Regression => logits,
            };
            Ok((0..out.rows())
                .map(|r| out.row(r).iter().map(|&v| v as f64).collect())
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(examples.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Mean validation loss and the metrics report.
pub fn evaluate_task(
    params: &EncoderParams<f32>,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<(f64, MetricsReport)> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch("no evaluation examples".into()));
    }
    let spec = params
        .task_spec()
        .ok_or_else(|| Error::Config("model has no task head".into()))?;
    let outputs = predict(params, examples, batch_size)?;
    let n = examples.len() as f64;
    match spec.kind {
        HeadKind::Classification => {
            let truth: Vec<usize> = examples.iter().map(|e| e.target as usize).collect();
            let loss = outputs
                .iter()
                .zip(&truth)
                .map(|(p, &t)| -p[t].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / n;
            Ok((loss, evaluate_classification(&outputs, &truth, spec.num_labels)?))
        }
        HeadKind::Regression => {
            let preds: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let targets: Vec<f64> = examples.iter().map(|e| e.target).collect();
            let loss = preds.iter().zip(&targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
            let report = evaluate_regression(&preds, &targets).unwrap_or_default();
            Ok((loss, report))
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: EncoderParams<f32>,
    pub log: EpochLog,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub evaluations: usize,
    pub stopped_early: bool,
    pub report: MetricsReport,
}

/// Task fine-tuning with AdamW, a linear schedule, per-epoch validation, and
/// early stopping on validation loss. The best epoch's parameters are
/// returned.
pub fn finetune(
    mut params: EncoderParams<f32>,
    vocab: &Vocabulary,
    train: &[LabeledExample],
    validation: &[LabeledExample],
    config: &FinetuneConfig,
    lexicon: Option<&Lexicon>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let spec = params
        .task_spec()
        .ok_or_else(|| Error::Config("model has no task head".into()))?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if validation.is_empty() {
        return Err(Error::Input("empty validation set".into()));
    }
    let val = encode_examples(validation, vocab, config.max_len, spec)?;
    let base_train = encode_examples(train, vocab, config.max_len, spec)?;
    let augment = lexicon.filter(|l| !l.is_empty() && config.augment_rate > 0.0);

    let root = RngState::new(config.seed);
    let mut dropout = root.fork(streams::DROPOUT);
    let steps_per_epoch = train.len().div_ceil(config.batch_size) as u64;
    let total = steps_per_epoch * config.epochs as u64;
    let schedule = ScheduleConfig::new(config.warmup_steps.min(total.saturating_sub(1)), total)?;
    let adam = AdamWConfig {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::for_model(&params);
    let mut stopper = EarlyStopState::new(config.patience);
    let mut best = params.clone();
    let mut best_report = MetricsReport::default();
    let mut log = EpochLog::default();
    let mut step = 0u64;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let augmented;
        let epoch_train = match augment {
            Some(lex) => {
                let mut rng = root.fork2(streams::AUGMENT, epoch as u64);
                let texts: Vec<LabeledExample> = train
                    .iter()
                    .map(|ex| synonym_augment(ex, lex, config.augment_rate, &mut rng))
                    .collect();
                augmented = encode_examples(&texts, vocab, config.max_len, spec)?;
                &augmented
            }
            None => &base_train,
        };
        let mut order: Vec<usize> = (0..epoch_train.len()).collect();
        order.shuffle(&mut root.fork2(streams::SHUFFLE, epoch as u64));

        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &epoch_train[i]).collect();
            let input = batch_input(&batch)?;
            let pass = run_task(&params, &input, &mut dropout, true).map_err(diverged(step, f64::NAN))?;
            let (loss, d_logits) = head_loss(spec, pass.logits(), &batch).map_err(diverged(step, f64::NAN))?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: step as usize,
                    loss,
                });
            }
            if spec.kind == HeadKind::Classification {
                for (r, e) in batch.iter().enumerate() {
                    let row = pass.logits().row(r);
                    let p = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                    correct += usize::from(p == e.target as usize);
                }
            }
            let grads = pass.backward(&params, &d_logits).map_err(diverged(step, loss))?;
            lr = lr_at_step(step, config.learning_rate, &schedule);
            adamw_step_model(&mut params, &grads, &mut state, &adam, lr).map_err(diverged(step, loss))?;
            step += 1;
            loss_sum += loss * batch.len() as f64;
        }

        let (val_loss, report) = evaluate_task(&params, &val, config.batch_size).map_err(diverged(step, f64::NAN))?;
        let classification = spec.kind == HeadKind::Classification;
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / epoch_train.len() as f64,
            val_loss,
            train_acc: classification.then(|| correct as f64 / epoch_train.len() as f64),
            val_acc: report.accuracy,
            precision: report.weighted.map(|w| w.precision),
            recall: report.weighted.map(|w| w.recall),
            f1: report.weighted.map(|w| w.f1),
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.push(row);
        let decision = stopper.update(val_loss).map_err(|_| Error::Divergence {
            step: step as usize,
            loss: val_loss,
        })?;
        if matches!(decision, StopDecision::Continue { improved: true }) || stopper.best_epoch == Some(epoch) {
            best = params.clone();
            best_report = report;
        }
        if decision == StopDecision::Stop {
            stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    Ok(FinetuneOutcome {
        params: best,
        log,
        best_epoch: stopper.best_epoch.map_or(1, |e| e + 1),
        best_val_loss: stopper.best.unwrap_or(f64::NAN),
        evaluations: stopper.evaluations,
        stopped_early,
        report: best_report,
    })
}
