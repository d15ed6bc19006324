//! Shared fixtures for the criterion benchmarks.

use kdforge_core::data::{generate_synthetic_corpus, CorpusSpec};
use kdforge_core::model::init_params;
use kdforge_core::tokenizer::{build_vocab, encode};
use kdforge_core::{EncoderInput, EncoderParams, ModelConfig, RngState, Tensor, Vocabulary};

/// Deterministic values in [-1, 1) from a multiplicative hash.
pub fn filled_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f32> {
    let data = (0..(rows * cols) as u64)
        .map(|i| ((i + seed).wrapping_mul(2_654_435_761) % 1000) as f32 / 500.0 - 1.0)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape")
}

pub fn corpus(lines: usize) -> (Vec<String>, Vocabulary) {
    let spec = CorpusSpec {
        lines,
        ..CorpusSpec::default()
    };
    let text = generate_synthetic_corpus(&spec, &mut RngState::new(1)).expect("corpus");
    let vocab = build_vocab(&text, 2000, 1).expect("vocab");
    (text, vocab)
}

/// A small encoder and one batch of `batch` sequences of up to `seq_len` tokens.
pub fn encoder_fixture(config: ModelConfig, batch: usize, seq_len: usize) -> (EncoderParams, EncoderInput) {
    let (text, vocab) = corpus(batch.max(8));
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..config
    };
    let params = init_params(&config, true, None, &mut RngState::new(2)).expect("params");
    let seqs: Vec<_> = text[..batch]
        .iter()
        .map(|l| encode(l, None, &vocab, seq_len).expect("encode"))
        .collect();
    (params, EncoderInput::from_sequences(&seqs).expect("batch"))
}
