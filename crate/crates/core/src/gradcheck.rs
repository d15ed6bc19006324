//! Central finite-difference checks of analytic gradients, run in `f64`.
//!
//! Each check draws random inputs from a seed, evaluates a scalar objective,
//! and returns the largest element-wise relative error
//! `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.

use rand::Rng;

use crate::error::Result;
use crate::model::{init_params, run_mlm, run_task, EncoderInput, EncoderParams, ModelConfig, TaskHeadSpec};
use crate::rng::RngState;
use crate::tensor::{
    CrossEntropy, Dropout, Gelu, LayerNorm, MatMul, MatMulBt, MeanSquaredError, Softmax, Tensor,
};

/// Denominator floor so gradients that are zero analytically do not blow up
/// the ratio on rounding noise.
pub const REL_FLOOR: f64 = 1e-6;

/// Every differentiable primitive with a standalone backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    MatMulBt,
    Softmax,
    LayerNorm,
    Gelu,
    Dropout,
    CrossEntropy,
    MeanSquaredError,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::MatMul,
        Primitive::MatMulBt,
        Primitive::Softmax,
        Primitive::LayerNorm,
        Primitive::Gelu,
        Primitive::Dropout,
        Primitive::CrossEntropy,
        Primitive::MeanSquaredError,
    ];
}

/// `h = 1e-5 · max(1, |x|)`
pub fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("valid random tensor")
}

/// Max relative error of `analytic` against central differences of `f`
/// around `x`.
fn compare(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let x0 = x.data()[i];
        let h = step(x0);
        probe.data_mut()[i] = x0 + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = x0 - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = x0;
        worst = worst.max(relative_error(analytic.data()[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks one primitive on random 3×4 inputs. Non-scalar outputs are reduced
/// with a random weighting `Σ wᵢ yᵢ`, so the upstream gradient is `w`.
pub fn check_primitive(op: Primitive, seed: u64) -> Result<f64> {
    let mut rng = RngState::with_stream(seed, 0);
    let x = random(&[3, 4], &mut rng);
    match op {
        Primitive::MatMul => {
            let b = random(&[4, 5], &mut rng);
            let w = random(&[3, 5], &mut rng);
            let mut mm = MatMul::new();
            mm.forward(&x, &b)?;
            let (ga, gb) = mm.backward(&w)?;
            let ea = compare(&x, &ga, |p| Ok(dot(&MatMul::new().forward(p, &b)?, &w)))?;
            let eb = compare(&b, &gb, |p| Ok(dot(&MatMul::new().forward(&x, p)?, &w)))?;
            Ok(ea.max(eb))
        }
        Primitive::MatMulBt => {
            let b = random(&[5, 4], &mut rng);
            let w = random(&[3, 5], &mut rng);
            let mut mm = MatMulBt::new();
            mm.forward(&x, &b)?;
            let (ga, gb) = mm.backward(&w)?;
            let ea = compare(&x, &ga, |p| Ok(dot(&MatMulBt::new().forward(p, &b)?, &w)))?;
            let eb = compare(&b, &gb, |p| Ok(dot(&MatMulBt::new().forward(&x, p)?, &w)))?;
            Ok(ea.max(eb))
        }
        Primitive::Softmax => {
            let w = random(&[3, 4], &mut rng);
            let mut op = Softmax::new();
            op.forward(&x)?;
            let g = op.backward(&w)?;
            compare(&x, &g, |p| Ok(dot(&Softmax::new().forward(p)?, &w)))
        }
        Primitive::LayerNorm => {
            let gain = random(&[4], &mut rng);
            let shift = random(&[4], &mut rng);
            let w = random(&[3, 4], &mut rng);
            let eps = 1e-12;
            let mut op = LayerNorm::new(eps);
            op.forward(&x, &gain, &shift)?;
            let (gx, gg, gs) = op.backward(&w)?;
            let run = |x: &Tensor<f64>, g: &Tensor<f64>, s: &Tensor<f64>| -> Result<f64> {
                Ok(dot(&LayerNorm::new(eps).forward(x, g, s)?, &w))
            };
            let ex = compare(&x, &gx, |p| run(p, &gain, &shift))?;
            let eg = compare(&gain, &gg, |p| run(&x, p, &shift))?;
            let es = compare(&shift, &gs, |p| run(&x, &gain, p))?;
            Ok(ex.max(eg).max(es))
        }
        Primitive::Gelu => {
            let w = random(&[3, 4], &mut rng);
            let mut op = Gelu::new();
            op.forward(&x)?;
            let g = op.backward(&w)?;
            compare(&x, &g, |p| Ok(dot(&Gelu::new().forward(p)?, &w)))
        }
        Primitive::Dropout => {
            let w = random(&[3, 4], &mut rng);
            let mask_rng = RngState::with_stream(seed, 1);
            let mut op = Dropout::new(0.3)?;
            op.forward(&x, &mut mask_rng.clone(), true)?;
            let g = op.backward(&w)?;
            compare(&x, &g, |p| {
                Ok(dot(&Dropout::new(0.3)?.forward(p, &mut mask_rng.clone(), true)?, &w))
            })
        }
        Primitive::CrossEntropy => {
            let targets: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            let mut op = CrossEntropy::new();
            op.forward(&x, &targets)?;
            let g = op.backward(1.0)?;
            compare(&x, &g, |p| CrossEntropy::new().forward(p, &targets))
        }
        Primitive::MeanSquaredError => {
            let targets: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut op = MeanSquaredError::new();
            op.forward(&x, &targets)?;
            let g = op.backward(1.0)?;
            compare(&x, &g, |p| MeanSquaredError::new().forward(p, &targets))
        }
    }
}

/// The small configuration used for end-to-end checks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden_size: 8,
        num_hidden_layers: 2,
        num_attention_heads: 2,
        intermediate_size: 16,
        vocab_size: 20,
        max_position_embeddings: 8,
        ..ModelConfig::default()
    }
}

/// Which loss drives the end-to-end check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EndToEnd {
    /// Masked-LM cross-entropy at a few positions, evaluation mode.
    Mlm,
    /// As `Mlm` but with dropout active under a fixed generator state.
    MlmDropout,
    /// Classification cross-entropy from the `[CLS]` state.
    Classifier,
}

/// Checks every parameter of a tiny encoder (hidden 8, 2 layers, 2 heads,
/// vocab 20, length 6) against central differences of the cross-entropy loss.
pub fn check_encoder(mode: EndToEnd, seed: u64) -> Result<f64> {
    let config = tiny_config();
    let mut rng = RngState::with_stream(seed, 0);
    let task = (mode == EndToEnd::Classifier).then(|| TaskHeadSpec::classification(3));
    let mut params: EncoderParams<f64> = init_params(&config, mode != EndToEnd::Classifier, task, &mut rng)?;
    // Larger weights than the 0.02 init so every path carries real signal.
    for (_, t) in params.named_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let (batch, len) = (2, 6);
    let mut ids = Vec::with_capacity(batch * len);
    let mut mask = Vec::with_capacity(batch * len);
    for b in 0..batch {
        for l in 0..len {
            let pad = b == 1 && l >= 4;
            ids.push(if pad { 0 } else { rng.random_range(1..20) });
            mask.push(u8::from(!pad));
        }
    }
    let type_ids = (0..batch * len).map(|i| u8::from(i % len >= 3)).collect();
    let input = EncoderInput {
        batch,
        seq_len: len,
        ids,
        type_ids,
        attention_mask: mask,
    };
    let positions = [1usize, 2, 5, 7, 9];
    let mlm_targets: Vec<usize> = positions.iter().map(|_| rng.random_range(0..20)).collect();
    let cls_targets: Vec<usize> = (0..batch).map(|_| rng.random_range(0..3)).collect();
    let training = mode == EndToEnd::MlmDropout;
    let dropout_rng = RngState::with_stream(seed, 1);

    let loss_and_pass = |p: &EncoderParams<f64>| -> Result<(f64, Tensor<f64>, EncoderParams<f64>)> {
        let mut r = dropout_rng.clone();
        let (pass, targets) = match mode {
            EndToEnd::Classifier => (run_task(p, &input, &mut r, false)?, &cls_targets),
            _ => (run_mlm(p, &input, Some(&positions), &mut r, training)?, &mlm_targets),
        };
        let mut ce = CrossEntropy::new();
        let loss = ce.forward(pass.logits(), targets)?;
        let d = ce.backward(1.0)?;
        let grads = pass.backward(p, &d)?;
        Ok((loss, d, grads))
    };
    let loss_only = |p: &EncoderParams<f64>| -> Result<f64> {
        let mut r = dropout_rng.clone();
        let (pass, targets) = match mode {
            EndToEnd::Classifier => (run_task(p, &input, &mut r, false)?, &cls_targets),
            _ => (run_mlm(p, &input, Some(&positions), &mut r, training)?, &mlm_targets),
        };
        CrossEntropy::new().forward(pass.logits(), targets)
    };

    let (_, _, grads) = loss_and_pass(&params)?;
    let analytic: Vec<Vec<f64>> = grads.named().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut worst = 0.0f64;
    let tensors = params.named().len();
    for ti in 0..tensors {
        let n = params.named()[ti].1.len();
        for i in 0..n {
            let x0 = params.named()[ti].1.data()[i];
            let h = step(x0);
            params.named_mut()[ti].1.data_mut()[i] = x0 + h;
            let up = loss_only(&params)?;
            params.named_mut()[ti].1.data_mut()[i] = x0 - h;
            let down = loss_only(&params)?;
            params.named_mut()[ti].1.data_mut()[i] = x0;
            worst = worst.max(relative_error(analytic[ti][i], (up - down) / (2.0 * h)));
        }
    }
    Ok(worst)
}
