//! Multi-head scaled dot-product self-attention.
//!
//! For each head `m`, queries, keys and values are projected, scores are
//! `Q_m K_mᵀ / √d_k`, padded key positions receive an additive `-1e9`
//! before the softmax, and the weighted values of all heads are
//! concatenated and projected by the output matrix.

use super::params::LayerParams;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{add_bias, sum_rows, Dropout, MatMul, MatMulBt, Real, Softmax, Tensor};

/// Additive score for padded keys; a finite stand-in for `-∞`.
pub const MASKED_SCORE: f64 = -1e9;

/// `x · w + b` with cached input.
#[derive(Debug, Clone, Default)]
pub(crate) struct Linear<F: Real> {
    mm: MatMul<F>,
}

impl<F: Real> Linear<F> {
    pub(crate) fn forward(&mut self, x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
        add_bias(&self.mm.forward(x, w)?, b)
    }

    /// `(d_x, d_w, d_b)`
    pub(crate) fn backward(&self, g: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
        let (dx, dw) = self.mm.backward(g)?;
        Ok((dx, dw, sum_rows(g)))
    }
}

/// `[B, L, H·d] → [B·H, L, d]`
fn split_heads<F: Real>(x: &Tensor<F>, heads: usize) -> Tensor<F> {
    let (b, l, h) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = h / heads;
    let mut out = vec![F::zero(); x.len()];
    for bi in 0..b {
        for li in 0..l {
            let src = &x.data()[(bi * l + li) * h..(bi * l + li + 1) * h];
            for m in 0..heads {
                let dst = ((bi * heads + m) * l + li) * d;
                out[dst..dst + d].copy_from_slice(&src[m * d..(m + 1) * d]);
            }
        }
    }
    Tensor::from_parts(vec![b * heads, l, d], out)
}

/// `[B·H, L, d] → [B, L, H·d]`
fn merge_heads<F: Real>(x: &Tensor<F>, heads: usize) -> Tensor<F> {
    let (bh, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let b = bh / heads;
    let h = heads * d;
    let mut out = vec![F::zero(); x.len()];
    for bi in 0..b {
        for m in 0..heads {
            for li in 0..l {
                let src = ((bi * heads + m) * l + li) * d;
                let dst = (bi * l + li) * h + m * d;
                out[dst..dst + d].copy_from_slice(&x.data()[src..src + d]);
            }
        }
    }
    Tensor::from_parts(vec![b, l, h], out)
}

/// Cached state of one attention forward pass.
#[derive(Debug, Clone)]
pub struct AttentionPass<F: Real> {
    heads: usize,
    scale: F,
    query: Linear<F>,
    key: Linear<F>,
    value: Linear<F>,
    scores: MatMulBt<F>,
    softmax: Softmax<F>,
    dropout: Dropout<F>,
    context: MatMul<F>,
    output: Linear<F>,
}

/// Gradients of the attention projection parameters.
#[derive(Debug, Clone)]
pub struct AttentionGrads<F: Real> {
    pub query_weight: Tensor<F>,
    pub query_bias: Tensor<F>,
    pub key_weight: Tensor<F>,
    pub key_bias: Tensor<F>,
    pub value_weight: Tensor<F>,
    pub value_bias: Tensor<F>,
    pub out_weight: Tensor<F>,
    pub out_bias: Tensor<F>,
}

/// Self-attention over `x: [B, L, h]`. `attention_mask` holds `B·L` flags,
/// 1 for real tokens and 0 for padding. Returns `[B, L, h]`.
pub fn multi_head_attention<F: Real>(
    x: &Tensor<F>,
    layer: &LayerParams<F>,
    attention_mask: &[u8],
    heads: usize,
    dropout_rate: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<(Tensor<F>, AttentionPass<F>)> {
    if x.rank() != 3 {
        return Err(Error::Dimension {
            op: "attention input",
            left: x.shape().to_vec(),
            right: vec![0, 0, layer.query_weight.shape()[0]],
        });
    }
    let (b, l, h) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if attention_mask.len() != b * l {
        return Err(Error::Dimension {
            op: "attention mask",
            left: vec![b, l],
            right: vec![attention_mask.len()],
        });
    }
    if heads == 0 || h % heads != 0 {
        return Err(Error::Config(format!("{heads} heads cannot split width {h}")));
    }
    let d = h / heads;
    let mut pass = AttentionPass {
        heads,
        scale: F::of(1.0 / (d as f64).sqrt()),
        query: Linear::default(),
        key: Linear::default(),
        value: Linear::default(),
        scores: MatMulBt::new(),
        softmax: Softmax::new(),
        dropout: Dropout::new(dropout_rate)?,
        context: MatMul::new(),
        output: Linear::default(),
    };

    let q = split_heads(&pass.query.forward(x, &layer.query_weight, &layer.query_bias)?, heads);
    let k = split_heads(&pass.key.forward(x, &layer.key_weight, &layer.key_bias)?, heads);
    let v = split_heads(&pass.value.forward(x, &layer.value_weight, &layer.value_bias)?, heads);

    let mut scores = pass.scores.forward(&q, &k)?;
    let masked = F::of(MASKED_SCORE);
    for (row_idx, row) in scores.data_mut().chunks_mut(l).enumerate() {
        let bi = row_idx / (heads * l);
        let key_mask = &attention_mask[bi * l..(bi + 1) * l];
        for (s, &m) in row.iter_mut().zip(key_mask) {
            *s *= pass.scale;
            if m == 0 {
                *s += masked;
            }
        }
    }
    let probs = pass.softmax.forward(&scores)?;
    let dropped = pass.dropout.forward(&probs, rng, training)?;
    let ctx = merge_heads(&pass.context.forward(&dropped, &v)?, heads);
    let out = pass.output.forward(&ctx, &layer.attn_out_weight, &layer.attn_out_bias)?;
    Ok((out, pass))
}

impl<F: Real> AttentionPass<F> {
    /// Post-softmax attention weights, `[B·H, L, L]` (before dropout).
    pub fn weights(&self) -> &Tensor<F> {
        self.softmax.output().expect("forward ran")
    }

    /// Returns `d_x` and the parameter gradients.
    pub fn backward(&self, upstream: &Tensor<F>) -> Result<(Tensor<F>, AttentionGrads<F>)> {
        let (d_ctx, out_weight, out_bias) = self.output.backward(upstream)?;
        let d_ctx = split_heads(&d_ctx, self.heads);
        let (d_dropped, d_v) = self.context.backward(&d_ctx)?;
        let d_probs = self.dropout.backward(&d_dropped)?;
        let d_scores = self.softmax.backward(&d_probs)?.scale(self.scale);
        let (d_q, d_k) = self.scores.backward(&d_scores)?;

        let (mut dx, query_weight, query_bias) = self.query.backward(&merge_heads(&d_q, self.heads))?;
        let (dx_k, key_weight, key_bias) = self.key.backward(&merge_heads(&d_k, self.heads))?;
        let (dx_v, value_weight, value_bias) = self.value.backward(&merge_heads(&d_v, self.heads))?;
        dx.add_assign(&dx_k)?;
        dx.add_assign(&dx_v)?;
        Ok((
            dx,
            AttentionGrads {
                query_weight,
                query_bias,
                key_weight,
                key_bias,
                value_weight,
                value_bias,
                out_weight,
                out_bias,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderParams, ModelConfig};

    fn layer_with(h: usize, heads: usize, seed: u64) -> LayerParams<f64> {
        let config = ModelConfig {
            hidden_size: h,
            num_hidden_layers: 1,
            num_attention_heads: heads,
            intermediate_size: 4,
            vocab_size: 8,
            max_position_embeddings: 8,
            ..ModelConfig::default()
        };
        let p: EncoderParams<f64> =
            crate::model::init_params(&config, false, None, &mut RngState::new(seed)).unwrap();
        p.layers[0].clone()
    }

    fn input(b: usize, l: usize, h: usize) -> Tensor<f64> {
        let data = (0..b * l * h).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        Tensor::new(vec![b, l, h], data).unwrap()
    }

    #[test]
    fn split_merge_are_inverse() {
        let x = input(2, 3, 6);
        let s = split_heads(&x, 3);
        assert_eq!(s.shape(), &[6, 3, 2]);
        assert_eq!(merge_heads(&s, 3), x);
    }

    #[test]
    fn zero_queries_give_uniform_weights_over_valid_keys() {
        let mut layer = layer_with(8, 2, 1);
        layer.query_weight.fill(0.0);
        let mask = [1, 1, 1, 0, 1, 1, 0, 0];
        let (_, pass) =
            multi_head_attention(&input(2, 4, 8), &layer, &mask, 2, 0.0, &mut RngState::new(0), false).unwrap();
        let w = pass.weights();
        for (r, row) in w.data().chunks(4).enumerate() {
            let bi = r / 8;
            let valid = mask[bi * 4..bi * 4 + 4].iter().filter(|&&m| m == 1).count() as f64;
            for (j, &p) in row.iter().enumerate() {
                let expected = if mask[bi * 4 + j] == 1 { 1.0 / valid } else { 0.0 };
                assert!((p - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let layer = layer_with(12, 3, 7);
        let (_, pass) = multi_head_attention(&input(2, 5, 12), &layer, &[1; 10], 3, 0.0, &mut RngState::new(0), false)
            .unwrap();
        for row in pass.weights().data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn mask_length_mismatch() {
        let layer = layer_with(8, 2, 1);
        let err = multi_head_attention(&input(1, 4, 8), &layer, &[1; 3], 2, 0.0, &mut RngState::new(0), false);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    /// One head, two positions, width one, every weight set by hand.
    ///
    /// x = [1, 2]; q = 2x, k = x + 1, v = 3x - 1, output = 0.5·ctx + 0.25
    ///   q = [2, 4], k = [2, 3], v = [2, 5]
    ///   scores (d_k = 1): row0 = [4, 6], row1 = [8, 12]
    ///   softmax row0 = [1/(1+e²), e²/(1+e²)], row1 = [1/(1+e⁴), e⁴/(1+e⁴)]
    ///   ctx_i = 2·p_i0 + 5·p_i1
    #[test]
    fn hand_computed_single_head() {
        let mut layer = layer_with(1, 1, 0);
        layer.query_weight = Tensor::from_f64(vec![1, 1], &[2.0]).unwrap();
        layer.query_bias = Tensor::from_f64(vec![1], &[0.0]).unwrap();
        layer.key_weight = Tensor::from_f64(vec![1, 1], &[1.0]).unwrap();
        layer.key_bias = Tensor::from_f64(vec![1], &[1.0]).unwrap();
        layer.value_weight = Tensor::from_f64(vec![1, 1], &[3.0]).unwrap();
        layer.value_bias = Tensor::from_f64(vec![1], &[-1.0]).unwrap();
        layer.attn_out_weight = Tensor::from_f64(vec![1, 1], &[0.5]).unwrap();
        layer.attn_out_bias = Tensor::from_f64(vec![1], &[0.25]).unwrap();
        let x = Tensor::from_f64(vec![1, 2, 1], &[1.0, 2.0]).unwrap();
        let (out, pass) = multi_head_attention(&x, &layer, &[1, 1], 1, 0.0, &mut RngState::new(0), false).unwrap();

        let e2 = 2f64.exp();
        let e4 = e2 * e2;
        let p0 = [1.0 / (1.0 + e2), e2 / (1.0 + e2)];
        let p1 = [1.0 / (1.0 + e4), e4 / (1.0 + e4)];
        let ctx = [2.0 * p0[0] + 5.0 * p0[1], 2.0 * p1[0] + 5.0 * p1[1]];
        let expected = [0.5 * ctx[0] + 0.25, 0.5 * ctx[1] + 0.25];
        for (a, b) in out.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let w = pass.weights().data();
        assert!((w[0] - p0[0]).abs() < 1e-12 && (w[3] - p1[1]).abs() < 1e-12);
        // frozen values of the same fixture
        assert!((expected[0] - 2.571_195_6).abs() < 1e-6);
        assert!((expected[1] - 2.723_020_7).abs() < 1e-6);
    }
}
