use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::LabeledExample;
use crate::error::{Error, Result};

/// Lowercase word → synonyms.
pub type Lexicon = HashMap<String, Vec<String>>;

/// Parses `word<TAB>syn1,syn2,...` lines. Blank lines and `#` comments are
/// skipped.
pub fn parse_lexicon(reader: impl BufRead) -> Result<Lexicon> {
    let mut lex = Lexicon::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, syns) = line
            .split_once('\t')
            .ok_or_else(|| Error::Input(format!("lexicon line {}: expected word<TAB>synonyms", i + 1)))?;
        let syns: Vec<String> = syns
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if !syns.is_empty() {
            lex.entry(word.trim().to_lowercase()).or_default().extend(syns);
        }
    }
    Ok(lex)
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    parse_lexicon(BufReader::new(file))
}

fn augment_text<R: Rng + ?Sized>(text: &str, lexicon: &Lexicon, rate: f64, rng: &mut R) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws = rest.len() - rest.trim_start().len();
        out.push_str(&rest[..ws]);
        rest = &rest[ws..];
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..end];
        match lexicon.get(&word.to_lowercase()) {
            Some(syns) if rng.random::<f64>() < rate => {
                out.push_str(&syns[rng.random_range(0..syns.len())]);
            }
            _ => out.push_str(word),
        }
        rest = &rest[end..];
    }
    out
}

/// Replaces each whitespace-delimited word found in `lexicon` with a
/// uniformly chosen synonym, with probability `rate` per word.
pub fn synonym_augment<R: Rng + ?Sized>(
    example: &LabeledExample,
    lexicon: &Lexicon,
    rate: f64,
    rng: &mut R,
) -> LabeledExample {
    if rate <= 0.0 || lexicon.is_empty() {
        return example.clone();
    }
    LabeledExample {
        text: augment_text(&example.text, lexicon, rate, rng),
        text_b: example
            .text_b
            .as_ref()
            .map(|b| augment_text(b, lexicon, rate, rng)),
        label: example.label,
    }
}
