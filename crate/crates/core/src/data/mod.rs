//! Dataset records, preparation steps, MLM masking, and synthetic corpora.

mod adhd;
mod augment;
mod masking;
mod split;
mod synthetic;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use adhd::{preprocess_adhd, preprocess_posts, PreprocessConfig, PreprocessStats, RawPost};
pub use augment::{load_lexicon, parse_lexicon, synonym_augment, Lexicon};
pub use masking::{mask_for_mlm, MlmBatch, MlmRow, IGNORE_INDEX};
pub use split::{balance_upsample, class_counts, stratified_split, DatasetSplit};
pub use synthetic::{
    generate_synthetic_corpus, generate_synthetic_regression, generate_synthetic_task, CorpusSpec,
    SyntheticTaskSpec,
};

/// A class index or a real-valued target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(u32),
    Score(f64),
}

impl Label {
    pub fn class(&self) -> Result<usize> {
        match *self {
            Label::Class(c) => Ok(c as usize),
            Label::Score(s) => Err(Error::Input(format!("expected a class label, found {s}"))),
        }
    }

    pub fn score(&self) -> f64 {
        match *self {
            Label::Class(c) => c as f64,
            Label::Score(s) => s,
        }
    }
}

/// One text (or text pair) with its label. Serialized as `{text, label}` or
/// `{text_a, text_b, label}` for pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub text: String,
    pub text_b: Option<String>,
    pub label: Label,
}

impl LabeledExample {
    pub fn single(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            text_b: None,
            label,
        }
    }

    pub fn pair(a: impl Into<String>, b: impl Into<String>, label: Label) -> Self {
        Self {
            text: a.into(),
            text_b: Some(b.into()),
            label,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ExampleRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_b: Option<String>,
    label: Label,
}

impl Serialize for LabeledExample {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let record = match &self.text_b {
            None => ExampleRecord {
                text: Some(self.text.clone()),
                text_a: None,
                text_b: None,
                label: self.label,
            },
            Some(b) => ExampleRecord {
                text: None,
                text_a: Some(self.text.clone()),
                text_b: Some(b.clone()),
                label: self.label,
            },
        };
        record.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabeledExample {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ExampleRecord::deserialize(d)?;
        let text = r
            .text
            .or(r.text_a)
            .ok_or_else(|| serde::de::Error::missing_field("text"))?;
        Ok(Self {
            text,
            text_b: r.text_b,
            label: r.label,
        })
    }
}

/// Reads JSON-lines examples; blank lines are ignored.
pub fn read_examples(reader: impl BufRead) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    read_examples(BufReader::new(file))
}

pub fn write_examples(mut w: impl Write, examples: &[LabeledExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_examples(path: impl AsRef<Path>, examples: &[LabeledExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_examples(&mut w, examples)?;
    w.flush()?;
    Ok(())
}

/// Plain-text corpus, one document per line; blank lines are dropped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}
