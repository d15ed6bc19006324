use kdforge_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use kdforge_core::data::load_corpus;
use kdforge_core::distill::DistillConfig;
use kdforge_core::model::init_params;
use kdforge_core::rng::streams;
use kdforge_core::tokenizer::build_vocab;
use kdforge_core::train::{pretrain_mlm, run_distillation, MlmData, MlmOutcome};
use kdforge_core::{EncoderParams, Error, ModelConfig, Result, RngState, Vocabulary};

use super::{
    ensure_dir, print_row, print_table_header, require_file, DISTILL_LOG, PRETRAIN_LOG, STUDENT_CHECKPOINT,
    TEACHER_CHECKPOINT,
};
use crate::args::{DistillArgs, MlmTrainArgs, PretrainArgs};

pub const VOCAB_FILE: &str = "vocab.txt";

fn distill_config(t: &MlmTrainArgs, lr: f64, temperature: f64, alpha: f64, seed: u64) -> DistillConfig {
    DistillConfig {
        temperature,
        alpha,
        epochs: t.epochs,
        batch_size: t.batch_size,
        learning_rate: lr,
        weight_decay: t.weight_decay,
        warmup_fraction: t.warmup_fraction,
        max_len: t.max_len,
        seed,
    }
}

fn load_data(t: &MlmTrainArgs, vocab: &Vocabulary) -> Result<MlmData> {
    let lines = load_corpus(&t.corpus)?;
    let validation = t.validation.as_ref().map(load_corpus).transpose()?;
    MlmData::prepare(&lines, validation.as_deref(), vocab, t.max_len)
}

fn check_max_len(max_len: usize, config: &ModelConfig, who: &str) -> Result<()> {
    if max_len > config.max_position_embeddings {
        return Err(Error::Config(format!(
            "max_len {max_len} exceeds the {who}'s {} positions",
            config.max_position_embeddings
        )));
    }
    Ok(())
}

fn save_run(
    outcome: MlmOutcome,
    vocab: &Vocabulary,
    seed: u64,
    dir: &std::path::Path,
    ckpt: &str,
    log: &str,
) -> Result<()> {
    outcome.log.write_csv(dir.join(log))?;
    let epochs = outcome.log.rows.len();
    let last_val = outcome.log.rows.last().map(|r| r.val_loss);
    let mut checkpoint = Checkpoint::new(outcome.params, Some(vocab));
    checkpoint.meta.epoch = epochs;
    checkpoint.meta.best_metric = last_val;
    checkpoint.meta.rng.insert("root".into(), RngState::new(seed).snapshot());
    save_checkpoint(dir.join(ckpt), &checkpoint)?;
    println!("saved {}", dir.join(ckpt).display());
    Ok(())
}

pub fn pretrain_teacher(args: &PretrainArgs) -> Result<()> {
    require_file(&args.train.corpus)?;
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocab(&load_corpus(&args.train.corpus)?, args.vocab_size, args.min_frequency)?,
    };
    let model = ModelConfig {
        hidden_size: args.hidden_size,
        num_hidden_layers: args.num_layers,
        num_attention_heads: args.num_heads,
        intermediate_size: args.intermediate_size,
        vocab_size: vocab.len(),
        max_position_embeddings: args.max_positions,
        ..ModelConfig::default()
    };
    model.validate()?;
    check_max_len(args.train.max_len, &model, "teacher")?;
    let config = distill_config(&args.train, args.learning_rate, 2.0, 0.0, args.common.seed);
    config.validate()?;
    let data = load_data(&args.train, &vocab)?;

    let root = RngState::new(args.common.seed);
    let params: EncoderParams = init_params(&model, true, None, &mut root.fork(streams::INIT))?;
    println!(
        "pretrain-teacher: layers={} hidden={} vocab={} lr={:e} epochs={} batch={} max_len={} seed={}",
        model.num_hidden_layers,
        model.hidden_size,
        model.vocab_size,
        config.learning_rate,
        config.epochs,
        config.batch_size,
        config.max_len,
        config.seed
    );
    print_table_header();
    let outcome = pretrain_mlm(params, &data, &config, print_row)?;

    ensure_dir(&args.common.out_dir)?;
    vocab.save(args.common.out_dir.join(VOCAB_FILE))?;
    save_run(outcome, &vocab, args.common.seed, &args.common.out_dir, TEACHER_CHECKPOINT, PRETRAIN_LOG)
}

pub fn distill(args: &DistillArgs) -> Result<()> {
    require_file(&args.teacher)?;
    require_file(&args.train.corpus)?;
    let teacher = load_checkpoint(&args.teacher)?;
    let vocab = teacher
        .vocabulary()?
        .ok_or_else(|| Error::Compatibility("teacher checkpoint carries no vocabulary".into()))?;
    if vocab.len() != teacher.params.config.vocab_size {
        return Err(Error::Compatibility(format!(
            "teacher vocabulary has {} pieces but the model expects {}",
            vocab.len(),
            teacher.params.config.vocab_size
        )));
    }
    let a = &args.arch;
    let model = ModelConfig {
        hidden_size: a.hidden_size,
        num_hidden_layers: a.num_layers,
        num_attention_heads: a.num_heads,
        intermediate_size: a.intermediate_size,
        vocab_size: vocab.len(),
        max_position_embeddings: a.max_positions,
        ..ModelConfig::default()
    };
    model.validate()?;
    check_max_len(args.train.max_len, &model, "student")?;
    check_max_len(args.train.max_len, &teacher.params.config, "teacher")?;
    let config = distill_config(
        &args.train,
        args.learning_rate,
        args.temperature,
        args.alpha,
        args.common.seed,
    );
    config.validate()?;
    let data = load_data(&args.train, &vocab)?;

    let root = RngState::new(args.common.seed);
    let student: EncoderParams = init_params(&model, true, None, &mut root.fork(streams::INIT))?;
    println!(
        "distill: T={:?} alpha={:?} lr={:e} epochs={} batch={} max_len={} seed={}",
        config.temperature,
        config.alpha,
        config.learning_rate,
        config.epochs,
        config.batch_size,
        config.max_len,
        config.seed
    );
    println!(
        "teacher: layers={} hidden={}; student: layers={} hidden={}",
        teacher.params.config.num_hidden_layers,
        teacher.params.config.hidden_size,
        model.num_hidden_layers,
        model.hidden_size
    );
    print_table_header();
    let outcome = run_distillation(Some(&teacher.params), student, &data, &config, print_row)?;

    ensure_dir(&args.common.out_dir)?;
    save_run(outcome, &vocab, args.common.seed, &args.common.out_dir, STUDENT_CHECKPOINT, DISTILL_LOG)
}
