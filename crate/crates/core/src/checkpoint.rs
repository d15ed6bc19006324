//! Binary checkpoint format.
//!
//! ```text
//! "LBKD" | version u32 | json_len u64 | json metadata
//! tensor_count u64 | per tensor:
//!     name_len u64 | name | rank u32 | extents u64 × rank | dtype u8 | payload
//! ```
//!
//! All integers and payload values are little-endian; dtype 0 is `f32`.
//! Optimizer moments are stored as extra tensors under `optimizer.m.` and
//! `optimizer.v.` prefixes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::model::{EncoderParams, ModelConfig, TaskHeadSpec};
use crate::optim::{AdamWState, EarlyStopState};
use crate::rng::RngSnapshot;
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;

pub const MAGIC: [u8; 4] = *b"LBKD";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const OPT_M: &str = "optimizer.m.";
const OPT_V: &str = "optimizer.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub task: Option<TaskHeadSpec>,
    pub vocab: Option<Vec<String>>,
    pub epoch: usize,
    pub best_metric: Option<f64>,
    #[serde(default)]
    pub rng: BTreeMap<String, RngSnapshot>,
    pub optimizer_step: Option<u64>,
    #[serde(default)]
    pub early_stop: Option<EarlyStopState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: EncoderParams<f32>,
    pub optimizer: Option<AdamWState<f32>>,
}

impl Checkpoint {
    pub fn new(params: EncoderParams<f32>, vocab: Option<&Vocabulary>) -> Self {
        Self {
            meta: CheckpointMeta {
                model: params.config.clone(),
                task: params.task_spec(),
                vocab: vocab.map(|v| v.pieces().to_vec()),
                epoch: 0,
                best_metric: None,
                rng: BTreeMap::new(),
                optimizer_step: None,
                early_stop: None,
            },
            params,
            optimizer: None,
        }
    }

    pub fn vocabulary(&self) -> Result<Option<Vocabulary>> {
        self.meta
            .vocab
            .as_ref()
            .map(|p| Vocabulary::from_pieces(p.clone()))
            .transpose()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.meta.clone();
        meta.model = self.params.config.clone();
        meta.task = self.params.task_spec();
        meta.optimizer_step = self.optimizer.as_ref().map(|o| o.t);
        let json = serde_json::to_vec(&meta)?;

        let named = self.params.named();
        let mut tensors: Vec<(String, &Tensor<f32>)> = named.iter().map(|(n, t)| (n.clone(), *t)).collect();
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != named.len() || opt.v.len() != named.len() {
                return Err(Error::Config("optimizer state does not match parameters".into()));
            }
            for ((name, _), m) in named.iter().zip(&opt.m) {
                tensors.push((format!("{OPT_M}{name}"), m));
            }
            for ((name, _), v) in named.iter().zip(&opt.v) {
                tensors.push((format!("{OPT_V}{name}"), v));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(DTYPE_F32);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let json_len = r.len("metadata length")?;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len, "metadata")?)
            .map_err(|e| CheckpointError::Malformed(format!("metadata: {e}")))?;
        let count = r.len("tensor count")?;
        let mut params = BTreeMap::new();
        let mut moments: [BTreeMap<String, Tensor<f32>>; 2] = Default::default();
        for _ in 0..count {
            let name_len = r.len("tensor name length")?;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32("tensor rank")? as usize;
            if !(1..=3).contains(&rank) {
                return Err(CheckpointError::Malformed(format!("tensor {name} has rank {rank}")).into());
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.len("tensor extents")?);
            }
            let dtype = r.take(1, "dtype")?[0];
            if dtype != DTYPE_F32 {
                return Err(CheckpointError::UnknownDtype(dtype).into());
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} is too large")))?;
            let data = r
                .take(n, "tensor payload")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
            let slot = if let Some(rest) = name.strip_prefix(OPT_M) {
                moments[0].insert(rest.to_string(), t)
            } else if let Some(rest) = name.strip_prefix(OPT_V) {
                moments[1].insert(rest.to_string(), t)
            } else {
                params.insert(name.clone(), t)
            };
            if slot.is_some() {
                return Err(CheckpointError::Malformed(format!("duplicate tensor {name}")).into());
            }
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos).into());
        }
        let malformed = |e: Error| -> Error { CheckpointError::Malformed(e.to_string()).into() };
        meta.model.validate().map_err(malformed)?;
        let params = EncoderParams::from_named(&meta.model, meta.task, params).map_err(malformed)?;
        let optimizer = match (moments[0].is_empty(), moments[1].is_empty()) {
            (true, true) => None,
            _ => {
                let [mut m, mut v] = moments;
                let mut state = AdamWState {
                    t: meta.optimizer_step.unwrap_or(0),
                    m: Vec::new(),
                    v: Vec::new(),
                };
                for (name, p) in params.named() {
                    let (mt, vt) = match (m.remove(&name), v.remove(&name)) {
                        (Some(a), Some(b)) if a.shape() == p.shape() && b.shape() == p.shape() => (a, b),
                        _ => {
                            return Err(CheckpointError::Malformed(format!(
                                "optimizer state for {name} missing or misshapen"
                            ))
                            .into())
                        }
                    };
                    state.m.push(mt);
                    state.v.push(vt);
                }
                if !m.is_empty() || !v.is_empty() {
                    return Err(CheckpointError::Malformed("optimizer state for unknown parameters".into()).into());
                }
                Some(state)
            }
        };
        Ok(Self {
            meta,
            params,
            optimizer,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn len(&mut self, what: &'static str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CheckpointError::Truncated(what).into())
    }
}

/// Writes atomically via a sibling temporary file.
pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_parameters, init_params};
    use crate::rng::RngState;

    fn tiny() -> ModelConfig {
        ModelConfig {
            hidden_size: 8,
            num_hidden_layers: 1,
            num_attention_heads: 2,
            intermediate_size: 12,
            vocab_size: 11,
            max_position_embeddings: 6,
            ..ModelConfig::default()
        }
    }

    fn sample() -> Checkpoint {
        let params = init_params(&tiny(), true, Some(TaskHeadSpec::classification(2)), &mut RngState::new(3)).unwrap();
        let mut ck = Checkpoint::new(params, None);
        let mut opt = AdamWState::for_model(&ck.params);
        opt.t = 7;
        for m in &mut opt.m {
            m.fill(0.25);
        }
        ck.optimizer = Some(opt);
        ck.meta.epoch = 4;
        ck.meta.optimizer_step = Some(7);
        ck.meta.best_metric = Some(0.125);
        ck.meta.rng.insert("dropout".into(), RngState::new(9).snapshot());
        ck
    }

    fn kind(bytes: &[u8]) -> CheckpointError {
        match Checkpoint::from_bytes(bytes) {
            Err(Error::Checkpoint(e)) => e,
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta.optimizer_step, Some(7));
        assert_eq!(back.optimizer, ck.optimizer);
        for ((na, a), (nb, b)) in ck.params.named().into_iter().zip(back.params.named()) {
            assert_eq!(na, nb);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"LBKD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(kind(&bytes[..bytes.len() - 1]), CheckpointError::Truncated(_)));
        assert!(matches!(kind(&bytes[..2]), CheckpointError::Truncated("magic")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(kind(&bad), CheckpointError::BadMagic(_)));
        let mut future = bytes.clone();
        future[4] = 9;
        assert!(matches!(kind(&future), CheckpointError::UnsupportedVersion { found: 9, expected: 1 }));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(kind(&extra), CheckpointError::TrailingBytes(1)));
    }

    #[test]
    fn table_config_parameter_count_survives_load() {
        let params: EncoderParams = EncoderParams::zeros(&ModelConfig::default(), true, None).unwrap();
        let bytes = Checkpoint::new(params, None).to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(count_parameters(&back.params), 29_831_610);
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("kdforge-ck-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.lbkd");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
        fs::remove_dir_all(&dir).unwrap();
    }
}
