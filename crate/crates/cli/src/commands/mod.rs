mod mlm;
mod preprocess;
mod task;

use std::fs;
use std::path::Path;

use kdforge_core::train::EpochRow;
use kdforge_core::{Error, Result};
use serde::Serialize;

use crate::args::Command;

pub use mlm::{distill, pretrain_teacher};
pub use preprocess::{preprocess, PreprocessSummary};
pub use task::{evaluate, finetune, glue, glue_defaults, TaskDefaults};

pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt";
pub const FINETUNED_CHECKPOINT: &str = "finetuned.ckpt";
pub const PRETRAIN_LOG: &str = "pretrain_log.csv";
pub const DISTILL_LOG: &str = "distill_log.csv";
pub const FINETUNE_LOG: &str = "finetune_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const VALIDATION_METRICS_FILE: &str = "validation_metrics.json";

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => preprocess(&a).map(|_| ()),
        Command::PretrainTeacher(a) => pretrain_teacher(&a),
        Command::Distill(a) => distill(&a),
        Command::Finetune(a) => finetune(&a),
        Command::Evaluate(a) => evaluate(&a).map(|_| ()),
        Command::Glue(a) => glue(&a).map(|_| ()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{}: no such file", path.display())))
    }
}

fn print_table_header() {
    println!(
        "{:>5} {:>10} {:>10} {:>9} {:>9} {:>9} {:>10} {:>8}",
        "epoch", "train_loss", "val_loss", "train_acc", "val_acc", "f1", "lr", "secs"
    );
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn print_row(r: &EpochRow) {
    println!(
        "{:>5} {:>10.4} {:>10.4} {:>9} {:>9} {:>9} {:>10.3e} {:>8.1}",
        r.epoch,
        r.train_loss,
        r.val_loss,
        opt(r.train_acc),
        opt(r.val_acc),
        opt(r.f1),
        r.lr,
        r.wall_seconds
    );
}
