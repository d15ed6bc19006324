//! Knowledge distillation for compact BERT-style encoders.

pub mod checkpoint;
pub mod data;
pub mod distill;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use rng::RngState;
pub use model::{EncoderInput, EncoderParams, HeadKind, ModelConfig, TaskHeadSpec};
pub use tensor::{Real, Tensor};
pub use tokenizer::{TokenizedSequence, Vocabulary};
