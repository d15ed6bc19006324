//! BERT-style encoder: configuration, parameters, and forward/backward passes.

mod attention;
mod config;
mod encoder;
mod params;

pub use attention::{multi_head_attention, AttentionGrads, AttentionPass, MASKED_SCORE};
pub use config::{HeadKind, ModelConfig, TaskHeadSpec};
pub use encoder::{
    encode, forward_mlm, forward_task, run_mlm, run_task, tied_decoder, EncoderInput, EncoderPass,
    ModelPass,
};
pub use params::{
    count_parameters, decays, init_params, Embeddings,
    EncoderParams, LayerParams, MlmHead, TaskHead,
};
