use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::EncoderInput;
use crate::tokenizer::{TokenizedSequence, Vocabulary, MASK_ID, NUM_RESERVED, UNK_ID};

/// Label value for positions that carry no MLM target.
pub const IGNORE_INDEX: i64 = -100;

/// One masked sequence. `labels[i]` is the original id at selected
/// positions and `None` elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmRow {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub type_ids: Vec<u8>,
    pub labels: Vec<Option<u32>>,
    pub positions: Vec<usize>,
}

fn maskable(id: u32, attended: u8) -> bool {
    attended == 1 && (id == UNK_ID || !Vocabulary::is_special(id))
}

/// Selects `max(1, round(rate·n))` of the `n` maskable positions; of those
/// 80% become `[MASK]`, 10% a uniformly random non-reserved id, 10% stay.
/// Returns `None` when nothing can be masked.
pub fn mask_for_mlm<R: Rng + ?Sized>(
    seq: &TokenizedSequence,
    vocab_size: usize,
    rng: &mut R,
    mask_rate: f64,
) -> Option<MlmRow> {
    let candidates: Vec<usize> = (0..seq.len())
        .filter(|&i| maskable(seq.ids[i], seq.attention_mask[i]))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let k = ((mask_rate * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
    let mut positions: Vec<usize> = index::sample(rng, candidates.len(), k)
        .into_iter()
        .map(|j| candidates[j])
        .collect();
    positions.sort_unstable();

    let mut ids = seq.ids.clone();
    let mut labels = vec![None; seq.len()];
    for &p in &positions {
        labels[p] = Some(seq.ids[p]);
        let r: f64 = rng.random();
        if r < 0.8 {
            ids[p] = MASK_ID;
        } else if r < 0.9 {
            ids[p] = if vocab_size > NUM_RESERVED {
                rng.random_range(NUM_RESERVED as u32..vocab_size as u32)
            } else {
                MASK_ID
            };
        }
    }
    Some(MlmRow {
        ids,
        attention_mask: seq.attention_mask.clone(),
        type_ids: seq.type_ids.clone(),
        labels,
        positions,
    })
}

/// Masked rows stacked into one encoder batch, with flat (`b·L + l`)
/// target positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmBatch {
    pub input: EncoderInput,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

impl MlmBatch {
    pub fn from_rows(rows: &[MlmRow]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::EmptyBatch("no MLM rows".into()))?;
        let len = first.ids.len();
        let mut input = EncoderInput {
            batch: rows.len(),
            seq_len: len,
            ids: Vec::with_capacity(rows.len() * len),
            type_ids: Vec::with_capacity(rows.len() * len),
            attention_mask: Vec::with_capacity(rows.len() * len),
        };
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        for (b, row) in rows.iter().enumerate() {
            if row.ids.len() != len {
                return Err(Error::Dimension {
                    op: "MLM batch rows",
                    left: vec![len],
                    right: vec![row.ids.len()],
                });
            }
            input.ids.extend(&row.ids);
            input.type_ids.extend(&row.type_ids);
            input.attention_mask.extend(&row.attention_mask);
            for &p in &row.positions {
                positions.push(b * len + p);
                targets.push(row.labels[p].expect("selected positions carry labels"));
            }
        }
        Ok(Self {
            input,
            positions,
            targets,
        })
    }

    /// Targets as class indices for cross-entropy.
    pub fn target_indices(&self) -> Vec<usize> {
        self.targets.iter().map(|&t| t as usize).collect()
    }

    /// Dense label row per position with [`IGNORE_INDEX`] where unselected.
    pub fn dense_labels(&self) -> Vec<i64> {
        let mut out = vec![IGNORE_INDEX; self.input.ids.len()];
        for (&p, &t) in self.positions.iter().zip(&self.targets) {
            out[p] = t as i64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;
    use crate::tokenizer::{CLS_ID, PAD_ID, SEP_ID};

    fn seq(real: usize, pad: usize) -> TokenizedSequence {
        let mut ids = vec![CLS_ID];
        ids.extend((0..real as u32).map(|i| 10 + i));
        ids.push(SEP_ID);
        let attended = ids.len();
        ids.extend(std::iter::repeat_n(PAD_ID, pad));
        TokenizedSequence {
            attention_mask: (0..ids.len()).map(|i| u8::from(i < attended)).collect(),
            type_ids: vec![0; ids.len()],
            ids,
            overflow: false,
        }
    }

    #[test]
    fn twenty_tokens_mask_three() {
        let row = mask_for_mlm(&seq(20, 4), 100, &mut RngState::new(0), 0.15).unwrap();
        assert_eq!(row.positions.len(), 3);
        assert_eq!(mask_for_mlm(&seq(2, 0), 100, &mut RngState::new(0), 0.15).unwrap().positions.len(), 1);
    }

    #[test]
    fn labels_and_specials() {
        let s = seq(30, 6);
        let mut rng = RngState::new(4);
        for _ in 0..200 {
            let row = mask_for_mlm(&s, 100, &mut rng, 0.15).unwrap();
            for i in 0..s.len() {
                match row.labels[i] {
                    Some(l) => assert_eq!(l, s.ids[i]),
                    None => assert_eq!(row.ids[i], s.ids[i]),
                }
                if matches!(s.ids[i], CLS_ID | SEP_ID | PAD_ID) {
                    assert_eq!(row.ids[i], s.ids[i]);
                    assert!(row.labels[i].is_none());
                }
            }
        }
    }

    #[test]
    fn all_special_sequence_is_skipped() {
        assert!(mask_for_mlm(&seq(0, 3), 100, &mut RngState::new(0), 0.15).is_none());
    }

    #[test]
    fn replacement_split_is_80_10_10() {
        let s = seq(100, 0);
        let mut rng = RngState::new(7);
        let (mut masked, mut random, mut kept, mut total) = (0usize, 0usize, 0usize, 0usize);
        while total < 100_000 {
            let row = mask_for_mlm(&s, 5000, &mut rng, 0.15).unwrap();
            for &p in &row.positions {
                total += 1;
                if row.ids[p] == MASK_ID {
                    masked += 1;
                } else if row.ids[p] == s.ids[p] {
                    kept += 1;
                } else {
                    random += 1;
                }
            }
        }
        let f = |x: usize| x as f64 / total as f64;
        // A random draw can hit the original id with probability ~1/5000.
        assert!((f(masked) - 0.8).abs() < 0.01, "{}", f(masked));
        assert!((f(random) - 0.1).abs() < 0.01, "{}", f(random));
        assert!((f(kept) - 0.1).abs() < 0.01, "{}", f(kept));
    }

    #[test]
    fn batch_positions_are_flat() {
        let mut rng = RngState::new(1);
        let rows = vec![
            mask_for_mlm(&seq(6, 0), 50, &mut rng, 0.5).unwrap(),
            mask_for_mlm(&seq(6, 0), 50, &mut rng, 0.5).unwrap(),
        ];
        let b = MlmBatch::from_rows(&rows).unwrap();
        assert_eq!(b.input.batch, 2);
        for (&p, &t) in b.positions.iter().zip(&b.targets) {
            let (r, l) = (p / 8, p % 8);
            assert_eq!(rows[r].labels[l], Some(t));
        }
        assert_eq!(b.dense_labels().iter().filter(|&&l| l != IGNORE_INDEX).count(), b.positions.len());
    }
}
