use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledExample};
use crate::error::{Error, Result};

const ONSETS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// A pronounceable pseudo-word, unique per index.
fn pseudo_word(mut i: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut s = String::new();
    for _ in 0..2 {
        let syl = i % base;
        s.push(ONSETS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
        i /= base;
    }
    while i > 0 {
        let syl = i % base;
        s.push(ONSETS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
        i /= base;
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub classes: usize,
    /// Distinct words; the first half is split into per-class indicator sets,
    /// the rest is shared background.
    pub vocab_size: usize,
    pub examples_per_class: usize,
    pub held_out_per_class: usize,
    /// Probability that a token comes from its class's indicator set.
    pub signal_strength: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub pair: bool,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            vocab_size: 60,
            examples_per_class: 200,
            held_out_per_class: 50,
            signal_strength: 0.4,
            min_len: 6,
            max_len: 12,
            pair: false,
        }
    }
}

impl SyntheticTaskSpec {
    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synthetic task needs at least 2 classes".into()));
        }
        if self.vocab_size < 4 * self.classes {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {} classes",
                self.vocab_size, self.classes
            )));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) || self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::Config("invalid signal strength or length range".into()));
        }
        Ok(())
    }

    fn indicator_width(&self) -> usize {
        (self.vocab_size / 2) / self.classes
    }
}

fn sentence<R: Rng + ?Sized>(spec: &SyntheticTaskSpec, class: usize, rng: &mut R) -> String {
    let width = spec.indicator_width();
    let background = spec.vocab_size - width * spec.classes;
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let words: Vec<String> = (0..len)
        .map(|_| {
            let idx = if rng.random::<f64>() < spec.signal_strength {
                class * width + rng.random_range(0..width)
            } else {
                width * spec.classes + rng.random_range(0..background)
            };
            pseudo_word(idx)
        })
        .collect();
    words.join(" ")
}

fn draw_examples<R: Rng + ?Sized>(spec: &SyntheticTaskSpec, per_class: usize, rng: &mut R) -> Vec<LabeledExample> {
    let mut out = Vec::with_capacity(per_class * spec.classes);
    for _ in 0..per_class {
        for c in 0..spec.classes {
            let label = Label::Class(c as u32);
            out.push(if spec.pair {
                LabeledExample::pair(sentence(spec, c, rng), sentence(spec, c, rng), label)
            } else {
                LabeledExample::single(sentence(spec, c, rng), label)
            });
        }
    }
    out
}

/// Class-conditional bag-of-words task. Returns `(train, held_out)`.
pub fn generate_synthetic_task<R: Rng + ?Sized>(
    spec: &SyntheticTaskSpec,
    rng: &mut R,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    spec.validate()?;
    let train = draw_examples(spec, spec.examples_per_class, rng);
    let held = draw_examples(spec, spec.held_out_per_class, rng);
    Ok((train, held))
}

/// Sentence pairs with a real score in `[0, 5]`: each indicator token is
/// drawn from the "high" set with probability `score/5`, otherwise from the
/// "low" set. `classes` is ignored.
pub fn generate_synthetic_regression<R: Rng + ?Sized>(
    spec: &SyntheticTaskSpec,
    rng: &mut R,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    let spec = SyntheticTaskSpec {
        classes: 2,
        ..spec.clone()
    };
    spec.validate()?;
    let width = spec.indicator_width();
    let background = spec.vocab_size - 2 * width;
    let make = |score: f64, rng: &mut R| -> String {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        (0..len)
            .map(|_| {
                let idx = if rng.random::<f64>() < spec.signal_strength {
                    let group = usize::from(rng.random::<f64>() >= score / 5.0);
                    group * width + rng.random_range(0..width)
                } else {
                    2 * width + rng.random_range(0..background)
                };
                pseudo_word(idx)
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut draw = |n: usize| -> Vec<LabeledExample> {
        (0..n)
            .map(|_| {
                let score = (rng.random_range(0.0..=5.0f64) * 100.0).round() / 100.0;
                let a = make(score, rng);
                let b = make(score, rng);
                LabeledExample::pair(a, b, Label::Score(score))
            })
            .collect()
    };
    let train = draw(spec.examples_per_class * 2);
    let held = draw(spec.held_out_per_class * 2);
    Ok((train, held))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub lines: usize,
    pub topics: usize,
    pub words_per_role: usize,
    pub max_clauses: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            lines: 500,
            topics: 6,
            words_per_role: 4,
            max_clauses: 3,
        }
    }
}

/// Topic-consistent sentences from a tiny grammar: each line picks a topic
/// and emits clauses `the ADJ NOUN VERB the ADJ NOUN` joined by `and`.
/// Masked words are predictable from context, but only up to the choice
/// among a topic's words.
pub fn generate_synthetic_corpus<R: Rng + ?Sized>(spec: &CorpusSpec, rng: &mut R) -> Result<Vec<String>> {
    if spec.lines == 0 || spec.topics == 0 || spec.words_per_role == 0 || spec.max_clauses == 0 {
        return Err(Error::Config("corpus spec extents must be positive".into()));
    }
    let w = spec.words_per_role;
    // Roles: 0 adjective, 1 noun, 2 verb.
    let word = |topic: usize, role: usize, k: usize| pseudo_word(100 + (topic * 3 + role) * w + k);
    let mut lines = Vec::with_capacity(spec.lines);
    for _ in 0..spec.lines {
        let topic = rng.random_range(0..spec.topics);
        let clauses = rng.random_range(1..=spec.max_clauses);
        let mut parts = Vec::new();
        for c in 0..clauses {
            if c > 0 {
                parts.push("and".to_string());
            }
            let verb = rng.random_range(0..w);
            let subject = rng.random_range(0..w);
            // The object noun is tied to the verb so the clause has structure.
            let object = (verb + 1) % w;
            parts.extend([
                "the".to_string(),
                word(topic, 0, rng.random_range(0..w)),
                word(topic, 1, subject),
                word(topic, 2, verb),
                "the".to_string(),
                word(topic, 0, rng.random_range(0..w)),
                word(topic, 1, object),
            ]);
        }
        parts.push(".".to_string());
        lines.push(parts.join(" "));
    }
    Ok(lines)
}
