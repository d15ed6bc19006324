use super::attention::{multi_head_attention, AttentionPass, Linear};
use super::params::{EncoderParams, LayerParams};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{matmul_bt, add_bias, sum_rows, Dropout, Gelu, LayerNorm, MatMulBt, Real, Tensor};
use crate::tokenizer::TokenizedSequence;

/// A padded batch of token sequences, `batch × seq_len`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderInput {
    pub batch: usize,
    pub seq_len: usize,
    pub ids: Vec<u32>,
    pub type_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
}

impl EncoderInput {
    pub fn from_sequences(seqs: &[TokenizedSequence]) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::EmptyBatch("no sequences".into()))?;
        let seq_len = first.len();
        let mut input = Self {
            batch: seqs.len(),
            seq_len,
            ids: Vec::with_capacity(seqs.len() * seq_len),
            type_ids: Vec::with_capacity(seqs.len() * seq_len),
            attention_mask: Vec::with_capacity(seqs.len() * seq_len),
        };
        for s in seqs {
            if s.len() != seq_len || s.type_ids.len() != seq_len || s.attention_mask.len() != seq_len {
                return Err(Error::Dimension {
                    op: "batch sequences",
                    left: vec![seq_len],
                    right: vec![s.len()],
                });
            }
            input.ids.extend(&s.ids);
            input.type_ids.extend(&s.type_ids);
            input.attention_mask.extend(&s.attention_mask);
        }
        Ok(input)
    }

    /// Flat index `b·L + l` of each sequence's first (`[CLS]`) position.
    pub fn cls_positions(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.seq_len).collect()
    }
}

fn gather_rows<F: Real>(x: &Tensor<F>, rows: &[usize]) -> Tensor<F> {
    let h = x.last_dim();
    let mut data = Vec::with_capacity(rows.len() * h);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Tensor::from_parts(vec![rows.len(), h], data)
}

fn scatter_rows<F: Real>(g: &Tensor<F>, rows: &[usize], shape: &[usize]) -> Tensor<F> {
    let mut out = Tensor::zeros(shape.to_vec());
    for (i, &r) in rows.iter().enumerate() {
        for (o, &v) in out.row_mut(r).iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    out
}

#[derive(Debug, Clone)]
struct LayerPass<F: Real> {
    attention: AttentionPass<F>,
    attn_dropout: Dropout<F>,
    attn_ln: LayerNorm<F>,
    inter: Linear<F>,
    gelu: Gelu<F>,
    output: Linear<F>,
    out_dropout: Dropout<F>,
    out_ln: LayerNorm<F>,
}

fn layer_forward<F: Real>(
    x: &Tensor<F>,
    p: &LayerParams<F>,
    mask: &[u8],
    params: &EncoderParams<F>,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<F>, LayerPass<F>)> {
    let c = &params.config;
    let (attn, attention) = multi_head_attention(
        x,
        p,
        mask,
        c.num_attention_heads,
        c.attention_probs_dropout_prob,
        rng,
        training,
    )?;
    let mut pass = LayerPass {
        attention,
        attn_dropout: Dropout::new(c.hidden_dropout_prob)?,
        attn_ln: LayerNorm::new(c.layer_norm_eps),
        inter: Linear::default(),
        gelu: Gelu::new(),
        output: Linear::default(),
        out_dropout: Dropout::new(c.hidden_dropout_prob)?,
        out_ln: LayerNorm::new(c.layer_norm_eps),
    };
    let attn = pass.attn_dropout.forward(&attn, rng, training)?;
    let x1 = pass.attn_ln.forward(&x.add(&attn)?, &p.attn_ln_gain, &p.attn_ln_shift)?;
    let inter = pass.inter.forward(&x1, &p.inter_weight, &p.inter_bias)?;
    let act = pass.gelu.forward(&inter)?;
    let out = pass.output.forward(&act, &p.out_weight, &p.out_bias)?;
    let out = pass.out_dropout.forward(&out, rng, training)?;
    let x2 = pass.out_ln.forward(&x1.add(&out)?, &p.out_ln_gain, &p.out_ln_shift)?;
    Ok((x2, pass))
}

impl<F: Real> LayerPass<F> {
    fn backward(&self, d_out: &Tensor<F>, g: &mut LayerParams<F>) -> Result<Tensor<F>> {
        let (d_r2, gain, shift) = self.out_ln.backward(d_out)?;
        g.out_ln_gain.add_assign(&gain)?;
        g.out_ln_shift.add_assign(&shift)?;
        let mut d_x1 = d_r2.clone();
        let d_o = self.out_dropout.backward(&d_r2)?;
        let (d_act, w, b) = self.output.backward(&d_o)?;
        g.out_weight.add_assign(&w)?;
        g.out_bias.add_assign(&b)?;
        let d_inter = self.gelu.backward(&d_act)?;
        let (d_x1_ffn, w, b) = self.inter.backward(&d_inter)?;
        g.inter_weight.add_assign(&w)?;
        g.inter_bias.add_assign(&b)?;
        d_x1.add_assign(&d_x1_ffn)?;

        let (d_r1, gain, shift) = self.attn_ln.backward(&d_x1)?;
        g.attn_ln_gain.add_assign(&gain)?;
        g.attn_ln_shift.add_assign(&shift)?;
        let mut d_x = d_r1.clone();
        let d_attn = self.attn_dropout.backward(&d_r1)?;
        let (d_x_attn, ag) = self.attention.backward(&d_attn)?;
        d_x.add_assign(&d_x_attn)?;
        g.query_weight.add_assign(&ag.query_weight)?;
        g.query_bias.add_assign(&ag.query_bias)?;
        g.key_weight.add_assign(&ag.key_weight)?;
        g.key_bias.add_assign(&ag.key_bias)?;
        g.value_weight.add_assign(&ag.value_weight)?;
        g.value_bias.add_assign(&ag.value_bias)?;
        g.attn_out_weight.add_assign(&ag.out_weight)?;
        g.attn_out_bias.add_assign(&ag.out_bias)?;
        Ok(d_x)
    }
}

/// Cached state of the embedding stack and every encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderPass<F: Real> {
    input: EncoderInput,
    hidden_size: usize,
    emb_ln: LayerNorm<F>,
    emb_dropout: Dropout<F>,
    layers: Vec<LayerPass<F>>,
    hidden: Tensor<F>,
}

impl<F: Real> EncoderPass<F> {
    /// Final hidden states, `[B, L, h]`.
    pub fn hidden(&self) -> &Tensor<F> {
        &self.hidden
    }

    /// Attention weights of every layer, `[B·H, L, L]` each.
    pub fn attention_weights(&self) -> Vec<&Tensor<F>> {
        self.layers.iter().map(|l| l.attention.weights()).collect()
    }

    /// Accumulates parameter gradients into `grads` given `d_hidden`.
    pub fn backward(&self, d_hidden: &Tensor<F>, grads: &mut EncoderParams<F>) -> Result<()> {
        self.hidden.same_shape("encoder backward", d_hidden)?;
        let mut d = d_hidden.clone();
        for (pass, g) in self.layers.iter().zip(grads.layers.iter_mut()).rev() {
            d = pass.backward(&d, g)?;
        }
        let d = self.emb_dropout.backward(&d)?;
        let (d_emb, gain, shift) = self.emb_ln.backward(&d)?;
        let e = &mut grads.embeddings;
        e.ln_gain.add_assign(&gain)?;
        e.ln_shift.add_assign(&shift)?;
        let h = self.hidden_size;
        let l = self.input.seq_len;
        for (flat, row) in d_emb.data().chunks(h).enumerate() {
            let targets = [
                (&mut e.word, self.input.ids[flat] as usize),
                (&mut e.position, flat % l),
                (&mut e.token_type, self.input.type_ids[flat] as usize),
            ];
            for (table, idx) in targets {
                for (o, &v) in table.row_mut(idx).iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        Ok(())
    }
}

/// Embeddings (token + position + type) → layer norm → dropout → encoder
/// layers, each attention + residual + layer norm then GELU feed-forward +
/// residual + layer norm.
pub fn encode<F: Real>(
    params: &EncoderParams<F>,
    input: &EncoderInput,
    rng: &mut RngState,
    training: bool,
) -> Result<EncoderPass<F>> {
    let c = &params.config;
    if input.seq_len > c.max_position_embeddings {
        return Err(Error::SequenceLength {
            len: input.seq_len,
            max: c.max_position_embeddings,
        });
    }
    let n = input.batch * input.seq_len;
    if input.ids.len() != n || input.type_ids.len() != n || input.attention_mask.len() != n || n == 0 {
        return Err(Error::Dimension {
            op: "encoder input",
            left: vec![input.batch, input.seq_len],
            right: vec![input.ids.len(), input.type_ids.len(), input.attention_mask.len()],
        });
    }
    if let Some(&id) = input.ids.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(Error::Vocab(format!("token id {id} >= vocab size {}", c.vocab_size)));
    }
    if let Some(&t) = input.type_ids.iter().find(|&&t| t as usize >= c.type_vocab_size) {
        return Err(Error::Vocab(format!("type id {t} >= type vocab size {}", c.type_vocab_size)));
    }

    let h = c.hidden_size;
    let e = &params.embeddings;
    let mut emb = Vec::with_capacity(n * h);
    for flat in 0..n {
        let w = e.word.row(input.ids[flat] as usize);
        let p = e.position.row(flat % input.seq_len);
        let t = e.token_type.row(input.type_ids[flat] as usize);
        emb.extend((0..h).map(|j| w[j] + p[j] + t[j]));
    }
    let emb = Tensor::new(vec![input.batch, input.seq_len, h], emb)?;
    let mut emb_ln = LayerNorm::new(c.layer_norm_eps);
    let mut emb_dropout = Dropout::new(c.hidden_dropout_prob)?;
    let mut x = emb_ln.forward(&emb, &e.ln_gain, &e.ln_shift)?;
    x = emb_dropout.forward(&x, rng, training)?;

    let mut layers = Vec::with_capacity(params.layers.len());
    for p in &params.layers {
        let (next, pass) = layer_forward(&x, p, &input.attention_mask, params, rng, training)?;
        layers.push(pass);
        x = next;
    }
    Ok(EncoderPass {
        input: input.clone(),
        hidden_size: h,
        emb_ln,
        emb_dropout,
        layers,
        hidden: x,
    })
}

#[derive(Debug, Clone)]
enum HeadPass<F: Real> {
    Mlm {
        positions: Vec<usize>,
        transform: Linear<F>,
        gelu: Gelu<F>,
        ln: LayerNorm<F>,
        decoder: MatMulBt<F>,
    },
    Task {
        positions: Vec<usize>,
        dropout: Dropout<F>,
        linear: Linear<F>,
    },
}

/// A full forward pass (encoder and one head) with everything needed for
/// the backward pass.
#[derive(Debug, Clone)]
pub struct ModelPass<F: Real> {
    encoder: EncoderPass<F>,
    head: HeadPass<F>,
    logits: Tensor<F>,
}

impl<F: Real> ModelPass<F> {
    pub fn logits(&self) -> &Tensor<F> {
        &self.logits
    }

    pub fn into_logits(self) -> Tensor<F> {
        self.logits
    }

    pub fn encoder(&self) -> &EncoderPass<F> {
        &self.encoder
    }

    /// Gradient of every parameter given `d_logits`.
    pub fn backward(&self, params: &EncoderParams<F>, d_logits: &Tensor<F>) -> Result<EncoderParams<F>> {
        self.logits.same_shape("head backward", d_logits)?;
        let mut grads = params.zeros_like();
        let hidden_shape = self.encoder.hidden.shape().to_vec();
        let d_hidden = match &self.head {
            HeadPass::Mlm {
                positions,
                transform,
                gelu,
                ln,
                decoder,
            } => {
                let g = grads.mlm.as_mut().ok_or_else(|| Error::Config("no MLM head".into()))?;
                g.decoder_bias.add_assign(&sum_rows(d_logits))?;
                let (d_t, d_word) = decoder.backward(d_logits)?;
                grads.embeddings.word.add_assign(&d_word)?;
                let (d_t, gain, shift) = ln.backward(&d_t)?;
                g.ln_gain.add_assign(&gain)?;
                g.ln_shift.add_assign(&shift)?;
                let d_t = gelu.backward(&d_t)?;
                let (d_rows, w, b) = transform.backward(&d_t)?;
                g.transform_weight.add_assign(&w)?;
                g.transform_bias.add_assign(&b)?;
                scatter_rows(&d_rows, positions, &hidden_shape)
            }
            HeadPass::Task {
                positions,
                dropout,
                linear,
            } => {
                let g = grads.task.as_mut().ok_or_else(|| Error::Config("no task head".into()))?;
                let (d_rows, w, b) = linear.backward(d_logits)?;
                g.weight.add_assign(&w)?;
                g.bias.add_assign(&b)?;
                scatter_rows(&dropout.backward(&d_rows)?, positions, &hidden_shape)
            }
        };
        self.encoder.backward(&d_hidden, &mut grads)?;
        Ok(grads)
    }
}

/// MLM logits at the given flat positions (`b·L + l`), or at every position
/// when `positions` is `None`. Logits are `[N, vocab]`.
pub fn run_mlm<F: Real>(
    params: &EncoderParams<F>,
    input: &EncoderInput,
    positions: Option<&[usize]>,
    rng: &mut RngState,
    training: bool,
) -> Result<ModelPass<F>> {
    let head = params
        .mlm
        .as_ref()
        .ok_or_else(|| Error::Config("parameters have no MLM head".into()))?;
    let encoder = encode(params, input, rng, training)?;
    let positions: Vec<usize> = match positions {
        Some(p) => p.to_vec(),
        None => (0..input.batch * input.seq_len).collect(),
    };
    if positions.is_empty() {
        return Err(Error::EmptyBatch("no MLM positions selected".into()));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= input.batch * input.seq_len) {
        return Err(Error::Input(format!("MLM position {p} outside the batch")));
    }
    let rows = gather_rows(&encoder.hidden, &positions);
    let mut transform = Linear::default();
    let mut gelu = Gelu::new();
    let mut ln = LayerNorm::new(params.config.layer_norm_eps);
    let mut decoder = MatMulBt::new();
    let t = transform.forward(&rows, &head.transform_weight, &head.transform_bias)?;
    let t = gelu.forward(&t)?;
    let t = ln.forward(&t, &head.ln_gain, &head.ln_shift)?;
    let logits = add_bias(&decoder.forward(&t, &params.embeddings.word)?, &head.decoder_bias)?;
    Ok(ModelPass {
        encoder,
        head: HeadPass::Mlm {
            positions,
            transform,
            gelu,
            ln,
            decoder,
        },
        logits,
    })
}

/// Task-head logits from the `[CLS]` hidden state, `[B, num_labels]`.
pub fn run_task<F: Real>(
    params: &EncoderParams<F>,
    input: &EncoderInput,
    rng: &mut RngState,
    training: bool,
) -> Result<ModelPass<F>> {
    let head = params
        .task
        .as_ref()
        .ok_or_else(|| Error::Config("parameters have no task head".into()))?;
    let encoder = encode(params, input, rng, training)?;
    let positions = input.cls_positions();
    let rows = gather_rows(&encoder.hidden, &positions);
    let mut dropout = Dropout::new(params.config.hidden_dropout_prob)?;
    let mut linear = Linear::default();
    let rows = dropout.forward(&rows, rng, training)?;
    let logits = linear.forward(&rows, &head.weight, &head.bias)?;
    Ok(ModelPass {
        encoder,
        head: HeadPass::Task {
            positions,
            dropout,
            linear,
        },
        logits,
    })
}

/// MLM logits for every position, `[B, L, vocab]`.
pub fn forward_mlm<F: Real>(
    params: &EncoderParams<F>,
    input: &EncoderInput,
    rng: &mut RngState,
    training: bool,
) -> Result<Tensor<F>> {
    let pass = run_mlm(params, input, None, rng, training)?;
    pass.into_logits()
        .reshape(vec![input.batch, input.seq_len, params.config.vocab_size])
}

/// Task logits, `[B, num_labels]`.
pub fn forward_task<F: Real>(
    params: &EncoderParams<F>,
    input: &EncoderInput,
    rng: &mut RngState,
    training: bool,
) -> Result<Tensor<F>> {
    Ok(run_task(params, input, rng, training)?.into_logits())
}

/// Decoder logits for already-transformed rows; exposed for benchmarks.
pub fn tied_decoder<F: Real>(rows: &Tensor<F>, params: &EncoderParams<F>) -> Result<Tensor<F>> {
    matmul_bt(rows, &params.embeddings.word)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, TaskHeadSpec};

    fn tiny() -> ModelConfig {
        ModelConfig {
            hidden_size: 8,
            num_hidden_layers: 2,
            num_attention_heads: 2,
            intermediate_size: 16,
            vocab_size: 20,
            max_position_embeddings: 12,
            ..ModelConfig::default()
        }
    }

    fn input(rows: &[&[u32]], pad_to: usize) -> EncoderInput {
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        for r in rows {
            ids.extend_from_slice(r);
            mask.extend(std::iter::repeat_n(1u8, r.len()));
            ids.extend(std::iter::repeat_n(0, pad_to - r.len()));
            mask.extend(std::iter::repeat_n(0u8, pad_to - r.len()));
        }
        EncoderInput {
            batch: rows.len(),
            seq_len: pad_to,
            type_ids: vec![0; ids.len()],
            ids,
            attention_mask: mask,
        }
    }

    #[test]
    fn table_config_mlm_shape() {
        let c = ModelConfig::default();
        let p: EncoderParams = init_params(&c, true, None, &mut RngState::new(0)).unwrap();
        let x = input(&[&[2, 100, 200, 3], &[2, 7, 3]], 4);
        let logits = forward_mlm(&p, &x, &mut RngState::new(1), false).unwrap();
        assert_eq!(logits.shape(), &[2, 4, 30522]);
    }

    #[test]
    fn eval_is_deterministic_and_training_is_not() {
        let p: EncoderParams = init_params(&tiny(), true, None, &mut RngState::new(3)).unwrap();
        let x = input(&[&[2, 5, 6, 7, 3]], 5);
        let a = forward_mlm(&p, &x, &mut RngState::new(1), false).unwrap();
        let b = forward_mlm(&p, &x, &mut RngState::new(2), false).unwrap();
        assert_eq!(a, b);
        let c = forward_mlm(&p, &x, &mut RngState::new(1), true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn logits_are_finite_and_spread() {
        let p: EncoderParams = init_params(&tiny(), true, None, &mut RngState::new(4)).unwrap();
        let x = input(&[&[2, 5, 9, 11, 3]], 5);
        let logits = forward_mlm(&p, &x, &mut RngState::new(0), false).unwrap();
        for row in logits.data().chunks(20) {
            assert!(row.iter().all(|v| v.is_finite()));
            let mean = row.iter().sum::<f32>() / 20.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 20.0;
            assert!(var > 1e-8, "degenerate row variance {var}");
        }
    }

    #[test]
    fn appended_padding_does_not_change_real_positions() {
        let p: EncoderParams = init_params(&tiny(), true, None, &mut RngState::new(5)).unwrap();
        let short = forward_mlm(&p, &input(&[&[2, 8, 9, 3]], 4), &mut RngState::new(0), false).unwrap();
        let long = forward_mlm(&p, &input(&[&[2, 8, 9, 3]], 9), &mut RngState::new(0), false).unwrap();
        for (a, b) in short.data().iter().zip(&long.data()[..4 * 20]) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn task_logits_follow_batch_permutation() {
        let p: EncoderParams =
            init_params(&tiny(), false, Some(TaskHeadSpec::classification(2)), &mut RngState::new(6)).unwrap();
        let rows: [&[u32]; 3] = [&[2, 5, 3], &[2, 9, 10, 11, 3], &[2, 12, 13, 3]];
        let fwd = forward_task(&p, &input(&rows, 5), &mut RngState::new(0), false).unwrap();
        assert_eq!(fwd.shape(), &[3, 2]);
        let perm = [2, 0, 1];
        let permuted: Vec<&[u32]> = perm.iter().map(|&i| rows[i]).collect();
        let got = forward_task(&p, &input(&permuted, 5), &mut RngState::new(0), false).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(got.row(k), fwd.row(i));
        }
    }

    #[test]
    fn regression_head_has_one_output() {
        let p: EncoderParams =
            init_params(&tiny(), false, Some(TaskHeadSpec::regression()), &mut RngState::new(7)).unwrap();
        let out = forward_task(&p, &input(&[&[2, 4, 3], &[2, 3]], 3), &mut RngState::new(0), false).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
    }

    #[test]
    fn overlong_sequences_are_rejected() {
        let p: EncoderParams = init_params(&tiny(), true, None, &mut RngState::new(8)).unwrap();
        let ids: Vec<u32> = (0..13).map(|i| 5 + i % 10).collect();
        let err = forward_mlm(&p, &input(&[&ids], 13), &mut RngState::new(0), false).unwrap_err();
        assert!(matches!(err, Error::SequenceLength { len: 13, max: 12 }));
    }

    #[test]
    fn out_of_vocab_ids_are_rejected() {
        let p: EncoderParams = init_params(&tiny(), true, None, &mut RngState::new(8)).unwrap();
        assert!(matches!(
            forward_mlm(&p, &input(&[&[2, 20, 3]], 3), &mut RngState::new(0), false),
            Err(Error::Vocab(_))
        ));
    }
}
