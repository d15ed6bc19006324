use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of a BERT-style encoder. The default is the
/// compact six-layer student (hidden 384, 6 heads, intermediate 3072).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_position_embeddings: usize,
    pub type_vocab_size: usize,
    pub hidden_dropout_prob: f64,
    pub attention_probs_dropout_prob: f64,
    pub layer_norm_eps: f64,
    pub initializer_range: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 384,
            num_hidden_layers: 6,
            num_attention_heads: 6,
            intermediate_size: 3072,
            vocab_size: 30522,
            max_position_embeddings: 512,
            type_vocab_size: 2,
            hidden_dropout_prob: 0.1,
            attention_probs_dropout_prob: 0.1,
            layer_norm_eps: 1e-12,
            initializer_range: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("hidden_size", self.hidden_size),
            ("num_attention_heads", self.num_attention_heads),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
            ("max_position_embeddings", self.max_position_embeddings),
            ("type_vocab_size", self.type_vocab_size),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_size % self.num_attention_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_size {} is not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            )));
        }
        for (name, p) in [
            ("hidden_dropout_prob", self.hidden_dropout_prob),
            ("attention_probs_dropout_prob", self.attention_probs_dropout_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} not in [0, 1)")));
            }
        }
        if !(self.layer_norm_eps >= 0.0) || !(self.initializer_range > 0.0) {
            return Err(Error::Config(
                "layer_norm_eps must be >= 0 and initializer_range > 0".into(),
            ));
        }
        Ok(())
    }

    /// Per-head key/query width, `d_k`.
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHeadSpec {
    pub kind: HeadKind,
    pub num_labels: usize,
}

impl TaskHeadSpec {
    pub fn classification(num_labels: usize) -> Self {
        Self {
            kind: HeadKind::Classification,
            num_labels,
        }
    }

    pub fn regression() -> Self {
        Self {
            kind: HeadKind::Regression,
            num_labels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            HeadKind::Regression if self.num_labels != 1 => Err(Error::Config(format!(
                "regression head must have 1 output, got {}",
                self.num_labels
            ))),
            HeadKind::Classification if self.num_labels < 2 => Err(Error::Config(format!(
                "classification head needs at least 2 labels, got {}",
                self.num_labels
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_64_wide_heads() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 64);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let c = ModelConfig {
            num_attention_heads: 5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn head_spec_invariants() {
        assert!(TaskHeadSpec::regression().validate().is_ok());
        assert!(TaskHeadSpec { kind: HeadKind::Regression, num_labels: 2 }.validate().is_err());
        assert!(TaskHeadSpec::classification(1).validate().is_err());
        assert!(TaskHeadSpec::classification(3).validate().is_ok());
    }

    #[test]
    fn config_json_uses_conventional_keys() {
        let json = serde_json::to_value(ModelConfig::default()).unwrap();
        assert_eq!(json["vocab_size"], 30522);
        assert_eq!(json["layer_norm_eps"], 1e-12);
        let partial: ModelConfig = serde_json::from_str(r#"{"hidden_size": 32}"#).unwrap();
        assert_eq!(partial.hidden_size, 32);
        assert_eq!(partial.num_hidden_layers, 6);
    }
}
