use std::collections::BTreeMap;

use rand::Rng;

use super::config::{ModelConfig, TaskHeadSpec};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Real, Tensor};

macro_rules! named_tensors {
    ($ty:ident { $($field:ident => $name:literal),* $(,)? }) => {
        impl<F: Real> $ty<F> {
            fn push_refs<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<F>)>) {
                $( out.push((format!("{prefix}{}", $name), &self.$field)); )*
            }

            fn push_muts<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<F>)>) {
                $( out.push((format!("{prefix}{}", $name), &mut self.$field)); )*
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings<F: Real> {
    pub word: Tensor<F>,
    pub position: Tensor<F>,
    pub token_type: Tensor<F>,
    pub ln_gain: Tensor<F>,
    pub ln_shift: Tensor<F>,
}

named_tensors!(Embeddings {
    word => "word_embeddings.weight",
    position => "position_embeddings.weight",
    token_type => "token_type_embeddings.weight",
    ln_gain => "LayerNorm.weight",
    ln_shift => "LayerNorm.bias",
});

/// One encoder block. Dense weights are stored `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F: Real> {
    pub query_weight: Tensor<F>,
    pub query_bias: Tensor<F>,
    pub key_weight: Tensor<F>,
    pub key_bias: Tensor<F>,
    pub value_weight: Tensor<F>,
    pub value_bias: Tensor<F>,
    pub attn_out_weight: Tensor<F>,
    pub attn_out_bias: Tensor<F>,
    pub attn_ln_gain: Tensor<F>,
    pub attn_ln_shift: Tensor<F>,
    pub inter_weight: Tensor<F>,
    pub inter_bias: Tensor<F>,
    pub out_weight: Tensor<F>,
    pub out_bias: Tensor<F>,
    pub out_ln_gain: Tensor<F>,
    pub out_ln_shift: Tensor<F>,
}

named_tensors!(LayerParams {
    query_weight => "attention.self.query.weight",
    query_bias => "attention.self.query.bias",
    key_weight => "attention.self.key.weight",
    key_bias => "attention.self.key.bias",
    value_weight => "attention.self.value.weight",
    value_bias => "attention.self.value.bias",
    attn_out_weight => "attention.output.dense.weight",
    attn_out_bias => "attention.output.dense.bias",
    attn_ln_gain => "attention.output.LayerNorm.weight",
    attn_ln_shift => "attention.output.LayerNorm.bias",
    inter_weight => "intermediate.dense.weight",
    inter_bias => "intermediate.dense.bias",
    out_weight => "output.dense.weight",
    out_bias => "output.dense.bias",
    out_ln_gain => "output.LayerNorm.weight",
    out_ln_shift => "output.LayerNorm.bias",
});

/// Masked-LM head. The decoder weight is the word-embedding matrix, so only
/// its bias lives here.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmHead<F: Real> {
    pub transform_weight: Tensor<F>,
    pub transform_bias: Tensor<F>,
    pub ln_gain: Tensor<F>,
    pub ln_shift: Tensor<F>,
    pub decoder_bias: Tensor<F>,
}

named_tensors!(MlmHead {
    transform_weight => "transform.dense.weight",
    transform_bias => "transform.dense.bias",
    ln_gain => "transform.LayerNorm.weight",
    ln_shift => "transform.LayerNorm.bias",
    decoder_bias => "bias",
});

/// Linear map from the `[CLS]` hidden state to task outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead<F: Real> {
    pub spec: TaskHeadSpec,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

named_tensors!(TaskHead {
    weight => "weight",
    bias => "bias",
});

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F: Real = f32> {
    pub config: ModelConfig,
    pub embeddings: Embeddings<F>,
    pub layers: Vec<LayerParams<F>>,
    pub mlm: Option<MlmHead<F>>,
    pub task: Option<TaskHead<F>>,
}

fn ones<F: Real>(n: usize) -> Tensor<F> {
    Tensor::full(vec![n], F::one())
}

fn zeros<F: Real>(shape: &[usize]) -> Tensor<F> {
    Tensor::zeros(shape.to_vec())
}

impl<F: Real> EncoderParams<F> {
    /// All weights zero, layer-norm gains one.
    pub fn zeros(config: &ModelConfig, with_mlm: bool, task: Option<TaskHeadSpec>) -> Result<Self> {
        config.validate()?;
        if let Some(spec) = &task {
            spec.validate()?;
        }
        let h = config.hidden_size;
        let i = config.intermediate_size;
        let embeddings = Embeddings {
            word: zeros(&[config.vocab_size, h]),
            position: zeros(&[config.max_position_embeddings, h]),
            token_type: zeros(&[config.type_vocab_size, h]),
            ln_gain: ones(h),
            ln_shift: zeros(&[h]),
        };
        let layer = LayerParams {
            query_weight: zeros(&[h, h]),
            query_bias: zeros(&[h]),
            key_weight: zeros(&[h, h]),
            key_bias: zeros(&[h]),
            value_weight: zeros(&[h, h]),
            value_bias: zeros(&[h]),
            attn_out_weight: zeros(&[h, h]),
            attn_out_bias: zeros(&[h]),
            attn_ln_gain: ones(h),
            attn_ln_shift: zeros(&[h]),
            inter_weight: zeros(&[h, i]),
            inter_bias: zeros(&[i]),
            out_weight: zeros(&[i, h]),
            out_bias: zeros(&[h]),
            out_ln_gain: ones(h),
            out_ln_shift: zeros(&[h]),
        };
        let mlm = with_mlm.then(|| MlmHead {
            transform_weight: zeros(&[h, h]),
            transform_bias: zeros(&[h]),
            ln_gain: ones(h),
            ln_shift: zeros(&[h]),
            decoder_bias: zeros(&[config.vocab_size]),
        });
        let task = task.map(|spec| TaskHead {
            spec,
            weight: zeros(&[h, spec.num_labels]),
            bias: zeros(&[spec.num_labels]),
        });
        Ok(Self {
            config: config.clone(),
            embeddings,
            layers: vec![layer; config.num_hidden_layers],
            mlm,
            task,
        })
    }

    /// Every tensor with its stable checkpoint name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        self.embeddings.push_refs("embeddings.", &mut out);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.push_refs(&format!("encoder.layer.{i}."), &mut out);
        }
        if let Some(mlm) = &self.mlm {
            mlm.push_refs("cls.predictions.", &mut out);
        }
        if let Some(task) = &self.task {
            task.push_refs("classifier.", &mut out);
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        self.embeddings.push_muts("embeddings.", &mut out);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.push_muts(&format!("encoder.layer.{i}."), &mut out);
        }
        if let Some(mlm) = &mut self.mlm {
            mlm.push_muts("cls.predictions.", &mut out);
        }
        if let Some(task) = &mut self.task {
            task.push_muts("classifier.", &mut out);
        }
        out
    }

    /// Same structure, every tensor zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for (_, t) in g.named_mut() {
            t.fill(F::zero());
        }
        g
    }

    pub fn task_spec(&self) -> Option<TaskHeadSpec> {
        self.task.as_ref().map(|t| t.spec)
    }

    /// Replaces the task head with a freshly initialized one.
    pub fn attach_task_head(&mut self, spec: TaskHeadSpec, rng: &mut RngState) -> Result<()> {
        spec.validate()?;
        let h = self.config.hidden_size;
        let sigma = self.config.initializer_range;
        self.task = Some(TaskHead {
            spec,
            weight: truncated_normal(&[h, spec.num_labels], sigma, rng),
            bias: zeros(&[spec.num_labels]),
        });
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> EncoderParams<G> {
        let mut out = EncoderParams::<G>::zeros(&self.config, self.mlm.is_some(), self.task_spec())
            .expect("config already validated");
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    /// Rebuilds parameters from named tensors, checking every name and shape.
    pub fn from_named(
        config: &ModelConfig,
        task: Option<TaskHeadSpec>,
        mut tensors: BTreeMap<String, Tensor<F>>,
    ) -> Result<Self> {
        let with_mlm = tensors.contains_key("cls.predictions.bias");
        let mut params = Self::zeros(config, with_mlm, task)?;
        for (name, slot) in params.named_mut() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Input(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Dimension {
                    op: "load parameter",
                    left: slot.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Input(format!("unexpected parameter {name}")));
        }
        Ok(params)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            a.add_assign(b)?;
        }
        Ok(())
    }
}

/// Scalar parameter count. The tied MLM decoder is the word-embedding
/// matrix and is therefore counted once.
pub fn count_parameters<F: Real>(params: &EncoderParams<F>) -> usize {
    params.named().iter().map(|(_, t)| t.len()).sum()
}

/// Whether AdamW weight decay applies to the named tensor. Biases and
/// layer-norm parameters are excluded.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains("LayerNorm"))
}

/// Standard deviation of a unit normal truncated to [-2, 2].
fn truncated_spread() -> f64 {
    let density = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = libm::erf(2.0 / std::f64::consts::SQRT_2);
    (1.0 - 4.0 * density / mass).sqrt()
}

/// Samples with standard deviation `sigma`: a normal truncated at two of its
/// own standard deviations, widened so the truncation does not shrink the
/// spread.
fn truncated_normal<F: Real>(shape: &[usize], sigma: f64, rng: &mut RngState) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let scale = sigma / truncated_spread();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            if z.abs() <= 2.0 {
                break F::of(z * scale);
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape from config")
}

/// Weights from a truncated normal with standard deviation
/// `initializer_range`; biases zero; layer-norm gains one and shifts zero.
pub fn init_params<F: Real>(
    config: &ModelConfig,
    with_mlm: bool,
    task: Option<TaskHeadSpec>,
    rng: &mut RngState,
) -> Result<EncoderParams<F>> {
    let mut params = EncoderParams::zeros(config, with_mlm, task)?;
    let sigma = config.initializer_range;
    for (name, t) in params.named_mut() {
        if name.ends_with(".bias") || name.contains("LayerNorm") {
            continue;
        }
        *t = truncated_normal(t.shape(), sigma, rng);
    }
    Ok(params)
}
