use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::diverged;
use super::log::{EpochLog, EpochRow};
use crate::data::{mask_for_mlm, MlmBatch, MlmRow};
use crate::distill::{combined_loss, combined_loss_weights, DistillConfig, DistillationLoss};
use crate::error::{Error, Result};
use crate::model::{run_mlm, EncoderParams};
use crate::optim::{adamw_step_model, lr_at_step, AdamWConfig, AdamWState, ScheduleConfig};
use crate::rng::{streams, RngState};
use crate::tensor::{CrossEntropy, Tensor};
use crate::tokenizer::{encode, TokenizedSequence, Vocabulary};

pub const MASK_RATE: f64 = 0.15;
/// Share of the corpus held out when no validation file is given.
pub const VALIDATION_TAIL: f64 = 0.05;

/// Tokenized MLM corpus split into training and validation sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmData {
    pub train: Vec<TokenizedSequence>,
    pub validation: Vec<TokenizedSequence>,
}

impl MlmData {
    /// Uses `validation` lines when given, otherwise the last 5% of `lines`
    /// (at least one line).
    pub fn prepare(
        lines: &[String],
        validation: Option<&[String]>,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let enc = |ls: &[String]| -> Result<Vec<TokenizedSequence>> {
            ls.iter().map(|l| encode(l, None, vocab, max_len)).collect()
        };
        let (train, val) = match validation {
            Some(v) => (enc(lines)?, enc(v)?),
            None => {
                if lines.len() < 2 {
                    return Err(Error::Input("corpus needs at least two lines to hold out validation".into()));
                }
                let held = ((lines.len() as f64 * VALIDATION_TAIL).ceil() as usize).clamp(1, lines.len() - 1);
                let cut = lines.len() - held;
                (enc(&lines[..cut])?, enc(&lines[cut..])?)
            }
        };
        if train.is_empty() || val.is_empty() {
            return Err(Error::Input("empty MLM corpus".into()));
        }
        Ok(Self {
            train,
            validation: val,
        })
    }
}

/// Cuts every row down to the longest attended length in the batch.
fn trim(rows: &mut [MlmRow]) {
    let len = rows
        .iter()
        .map(|r| r.attention_mask.iter().rposition(|&m| m == 1).map_or(1, |p| p + 1))
        .max()
        .unwrap_or(1);
    for r in rows {
        r.ids.truncate(len);
        r.attention_mask.truncate(len);
        r.type_ids.truncate(len);
        r.labels.truncate(len);
    }
}

fn masked_batches(
    seqs: &[TokenizedSequence],
    order: &[usize],
    batch_size: usize,
    vocab_size: usize,
    rng: &mut RngState,
) -> Result<Vec<MlmBatch>> {
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut rows: Vec<MlmRow> = chunk
            .iter()
            .filter_map(|&i| mask_for_mlm(&seqs[i], vocab_size, rng, MASK_RATE))
            .collect();
        if rows.is_empty() {
            continue;
        }
        trim(&mut rows);
        out.push(MlmBatch::from_rows(&rows)?);
    }
    Ok(out)
}

fn argmax(row: &[f32]) -> usize {
    (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b })
}

/// Top-1 hits plus sparse per-class counts for macro P/R/F1.
#[derive(Default)]
struct TokenScores {
    correct: usize,
    total: usize,
    /// class → (true positives, predicted, actual)
    classes: HashMap<usize, (usize, usize, usize)>,
}

impl TokenScores {
    fn add(&mut self, logits: &Tensor<f32>, targets: &[usize]) {
        for (r, &t) in targets.iter().enumerate() {
            let p = argmax(logits.row(r));
            self.total += 1;
            self.classes.entry(p).or_default().1 += 1;
            self.classes.entry(t).or_default().2 += 1;
            if p == t {
                self.correct += 1;
                self.classes.entry(t).or_default().0 += 1;
            }
        }
    }

    fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }

    /// Macro averages over every class that was predicted or present.
    fn macro_prf(&self) -> (f64, f64, f64) {
        let k = self.classes.len().max(1) as f64;
        let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
        // Sorted so the float sum does not depend on hash order.
        let mut entries: Vec<_> = self.classes.iter().collect();
        entries.sort_by_key(|(c, _)| **c);
        for (_, &(tp, pred, actual)) in entries {
            let pc = if pred > 0 { tp as f64 / pred as f64 } else { 0.0 };
            let rc = if actual > 0 { tp as f64 / actual as f64 } else { 0.0 };
            p += pc;
            r += rc;
            f += if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
        }
        (p / k, r / k, f / k)
    }
}

/// Result of an MLM training run.
#[derive(Clone, Debug)]
pub struct MlmOutcome {
    pub params: EncoderParams<f32>,
    pub log: EpochLog,
    pub optimizer: AdamWState<f32>,
    pub steps: u64,
}

/// Masked-token cross-entropy, accuracy, and macro P/R/F1 in eval mode.
/// Masking uses a fixed stream so every call sees the same targets.
pub fn evaluate_mlm(
    params: &EncoderParams<f32>,
    seqs: &[TokenizedSequence],
    batch_size: usize,
    seed: u64,
) -> Result<(f64, f64, (f64, f64, f64))> {
    let mut mask_rng = RngState::with_stream(seed, streams::VALIDATION);
    let order: Vec<usize> = (0..seqs.len()).collect();
    let batches = masked_batches(seqs, &order, batch_size, params.config.vocab_size, &mut mask_rng)?;
    let mut scores = TokenScores::default();
    let (mut loss_sum, mut count) = (0.0, 0usize);
    let mut unused = RngState::with_stream(seed, streams::DROPOUT);
    for b in &batches {
        let pass = run_mlm(params, &b.input, Some(&b.positions), &mut unused, false)?;
        let targets = b.target_indices();
        let loss = CrossEntropy::new().forward(pass.logits(), &targets)? as f64;
        loss_sum += loss * targets.len() as f64;
        count += targets.len();
        scores.add(pass.logits(), &targets);
    }
    if count == 0 {
        return Err(Error::EmptyBatch("validation set has no maskable tokens".into()));
    }
    Ok((loss_sum / count as f64, scores.accuracy(), scores.macro_prf()))
}

/// MLM training of `student`, optionally distilled from a frozen `teacher`.
///
/// Every epoch re-masks and reshuffles the training sequences from streams
/// keyed by the epoch number. Losses are taken at masked positions only;
/// the teacher runs without dropout. With `teacher = None` or `alpha = 0`
/// this is plain MLM training.
pub fn run_distillation(
    teacher: Option<&EncoderParams<f32>>,
    mut student: EncoderParams<f32>,
    data: &MlmData,
    config: &DistillConfig,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<MlmOutcome> {
    config.validate()?;
    if student.mlm.is_none() {
        return Err(Error::Config("student has no MLM head".into()));
    }
    if let Some(t) = teacher {
        if t.config.vocab_size != student.config.vocab_size {
            return Err(Error::Compatibility(format!(
                "teacher vocab {} differs from student vocab {}",
                t.config.vocab_size, student.config.vocab_size
            )));
        }
        if t.mlm.is_none() {
            return Err(Error::Compatibility("teacher has no MLM head".into()));
        }
    }
    let teacher = teacher.filter(|_| config.alpha > 0.0);
    let alpha = if teacher.is_some() { config.alpha } else { 0.0 };
    let (w_kd, w_ce) = combined_loss_weights(alpha, config.temperature);

    let root = RngState::new(config.seed);
    let mut dropout = root.fork(streams::DROPOUT);
    let steps_per_epoch = data.train.len().div_ceil(config.batch_size) as u64;
    let schedule = ScheduleConfig::with_warmup_fraction(config.warmup_fraction, steps_per_epoch * config.epochs as u64)?;
    let adam = AdamWConfig {
        lr: config.learning_rate,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamWState::for_model(&student);
    let mut step = 0u64;
    let mut log = EpochLog::default();
    let vocab_size = student.config.vocab_size;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut root.fork2(streams::SHUFFLE, epoch as u64));
        let mut mask_rng = root.fork2(streams::MASKING, epoch as u64);
        let batches = masked_batches(&data.train, &order, config.batch_size, vocab_size, &mut mask_rng)?;

        let mut scores = TokenScores::default();
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for b in &batches {
            let targets = b.target_indices();
            let (teacher_logits, student_pass) = rayon::join(
                || {
                    teacher.map(|t| {
                        let mut idle = RngState::with_stream(config.seed, streams::VALIDATION);
                        run_mlm(t, &b.input, Some(&b.positions), &mut idle, false).map(|p| p.into_logits())
                    })
                },
                || run_mlm(&student, &b.input, Some(&b.positions), &mut dropout, true),
            );
            let pass = student_pass.map_err(diverged(step, f64::NAN))?;
            let mut ce = CrossEntropy::new();
            let ce_loss = ce.forward(pass.logits(), &targets).map_err(diverged(step, f64::NAN))? as f64;
            let mut d_logits = ce.backward(w_ce as f32)?;
            let mut kd_loss = 0.0;
            if let Some(t_logits) = teacher_logits.transpose()? {
                let mut kd = DistillationLoss::new();
                kd_loss = kd
                    .forward(&t_logits, pass.logits(), config.temperature)
                    .map_err(diverged(step, f64::NAN))? as f64;
                d_logits.add_assign(&kd.backward(w_kd as f32)?)?;
            }
            let loss = combined_loss(kd_loss, ce_loss, alpha, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: step as usize,
                    loss,
                });
            }
            let grads = pass.backward(&student, &d_logits).map_err(diverged(step, loss))?;
            lr = lr_at_step(step, config.learning_rate, &schedule);
            adamw_step_model(&mut student, &grads, &mut state, &adam, lr).map_err(diverged(step, loss))?;
            step += 1;
            loss_sum += loss;
            scores.add(pass.logits(), &targets);
        }
        let (val_loss, val_acc, (p, r, f)) = evaluate_mlm(&student, &data.validation, config.batch_size, config.seed)
            .map_err(diverged(step, f64::NAN))?;
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.len().max(1) as f64,
            val_loss,
            train_acc: Some(scores.accuracy()),
            val_acc: Some(val_acc),
            precision: Some(p),
            recall: Some(r),
            f1: Some(f),
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.push(row);
    }
    Ok(MlmOutcome {
        params: student,
        log,
        optimizer: state,
        steps: step,
    })
}

/// Plain MLM training, used to provision a desk-scale teacher.
pub fn pretrain_mlm(
    params: EncoderParams<f32>,
    data: &MlmData,
    config: &DistillConfig,
    on_epoch: impl FnMut(&EpochRow),
) -> Result<MlmOutcome> {
    let config = DistillConfig {
        alpha: 0.0,
        ..config.clone()
    };
    run_distillation(None, params, data, &config, on_epoch)
}
