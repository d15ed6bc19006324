//! Training loops: MLM pretraining and distillation, and task fine-tuning.

mod finetune;
mod log;
mod mlm;

pub use finetune::{encode_examples, evaluate_task, finetune, predict, EncodedExample, FinetuneConfig, FinetuneOutcome};
pub use log::{EpochLog, EpochRow, CSV_HEADER};
use crate::error::Error;

/// Non-finite values met while training mean the run has diverged.
fn diverged(step: u64, loss: f64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Divergence {
            step: step as usize,
            loss,
        },
        e => e,
    }
}

pub use mlm::{evaluate_mlm, pretrain_mlm, run_distillation, MlmData, MlmOutcome, MASK_RATE, VALIDATION_TAIL};
