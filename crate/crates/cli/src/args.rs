use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "kdforge", version, about = "Distill and fine-tune compact BERT encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, label, balance, and split a raw forum dump.
    Preprocess(PreprocessArgs),
    /// Train a desk-scale MLM teacher from scratch.
    PretrainTeacher(PretrainArgs),
    /// Distill a student encoder from a teacher checkpoint.
    Distill(DistillArgs),
    /// Fine-tune a checkpoint on a labeled task.
    Finetune(FinetuneArgs),
    /// Score a checkpoint (or stored predictions) on a labeled file.
    Evaluate(EvaluateArgs),
    /// Fine-tune and evaluate with per-task GLUE defaults.
    Glue(GlueArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON object whose keys are flag names; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub no_balance: bool,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value = "ADHD")]
    pub subreddit: String,
    #[command(flatten)]
    pub common: Common,
}

/// Encoder shape. Defaults are the compact six-layer student.
#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    #[arg(long, default_value_t = 384)]
    pub hidden_size: usize,
    #[arg(long, default_value_t = 6)]
    pub num_layers: usize,
    #[arg(long, default_value_t = 6)]
    pub num_heads: usize,
    #[arg(long, default_value_t = 3072)]
    pub intermediate_size: usize,
    #[arg(long, default_value_t = 512)]
    pub max_positions: usize,
}

#[derive(Debug, Clone, Args)]
pub struct MlmTrainArgs {
    /// One training sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Companion validation lines; default holds out the last 5% of the corpus.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub warmup_fraction: f64,
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub train: MlmTrainArgs,
    /// Existing vocabulary (one piece per line); built from the corpus otherwise.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 8000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 1)]
    pub min_frequency: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub hidden_size: usize,
    #[arg(long, default_value_t = 4)]
    pub num_layers: usize,
    #[arg(long, default_value_t = 4)]
    pub num_heads: usize,
    #[arg(long, default_value_t = 256)]
    pub intermediate_size: usize,
    #[arg(long, default_value_t = 128)]
    pub max_positions: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct DistillArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[command(flatten)]
    pub train: MlmTrainArgs,
    #[arg(long, default_value_t = 2.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub learning_rate: f64,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct TaskTrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    /// Tab-separated `word<TAB>syn1,syn2` lines for synonym replacement.
    #[arg(long)]
    pub augment_lexicon: Option<PathBuf>,
    #[arg(long)]
    pub augment_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub task: TaskTrainArgs,
    /// Classification arity; inferred from the labels when absent.
    #[arg(long, conflicts_with = "regression")]
    pub num_labels: Option<usize>,
    #[arg(long)]
    pub regression: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    /// Checkpoint with a task head.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub model: Option<PathBuf>,
    /// Stored outputs instead of a model: one JSON line per example, either a
    /// probability array or a regression value.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 512)]
    pub max_len: usize,
    /// Include ROC points in the report.
    #[arg(long)]
    pub roc: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GlueTask {
    Mrpc,
    Sst2,
    Cola,
    Qqp,
    Mnli,
    Stsb,
}

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct GlueArgs {
    #[arg(long, value_enum)]
    pub task: GlueTask,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub train: TaskTrainArgs,
    /// Scored after training; defaults to the validation file.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}
