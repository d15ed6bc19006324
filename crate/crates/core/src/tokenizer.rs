//! WordPiece tokenization.
//!
//! Text is lowercased, split on whitespace, and ASCII punctuation is split
//! off as single-character words. Each word is then segmented by greedy
//! longest match against the vocabulary, with `##` marking pieces that
//! continue a word. A word that cannot be fully segmented becomes `[UNK]`.
//! No Unicode normalization beyond lowercasing is applied.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_RESERVED: usize = RESERVED.len();

const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;
const MAX_SUFFIX_CHARS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered piece list. The first entries must
    /// be the reserved tokens and every piece must be unique.
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        if pieces.len() < NUM_RESERVED {
            return Err(Error::Vocab(format!(
                "{} pieces is fewer than the {NUM_RESERVED} reserved tokens",
                pieces.len()
            )));
        }
        for (id, expected) in RESERVED.iter().enumerate() {
            if pieces[id] != *expected {
                return Err(Error::Vocab(format!(
                    "id {id} must be {expected}, found {:?}",
                    pieces[id]
                )));
            }
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (id, piece) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.contains(['\n', '\r']) {
                return Err(Error::Vocab(format!("invalid piece {piece:?} at id {id}")));
            }
            if index.insert(piece.clone(), id as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate piece {piece:?}")));
            }
        }
        Ok(Self { pieces, index })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_RESERVED && id != UNK_ID
    }

    /// One piece per line; the line number is the id.
    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let pieces = reader
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        Self::from_pieces(pieces)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for piece in &self.pieces {
            writeln!(w, "{piece}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

/// Lowercase, split on whitespace, split ASCII punctuation into its own words.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_ascii_punctuation() {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

/// Frequency-ranked vocabulary: reserved tokens, then whole words, word-initial
/// characters, `##` continuation characters, and `##` suffixes (up to four
/// characters), ordered by descending count with ties broken
/// lexicographically. Pieces seen fewer than `min_frequency` times are
/// dropped.
pub fn build_vocab<S: AsRef<str>>(
    lines: &[S],
    target_size: usize,
    min_frequency: usize,
) -> Result<Vocabulary> {
    if target_size < NUM_RESERVED {
        return Err(Error::Config(format!(
            "vocabulary size {target_size} is below the {NUM_RESERVED} reserved tokens"
        )));
    }
    let mut word_counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for word in pre_tokenize(line.as_ref()) {
            *word_counts.entry(word).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
    }

    let mut counts: HashMap<String, usize> = HashMap::new();
    for (word, &n) in &word_counts {
        *counts.entry(word.clone()).or_default() += n;
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > 1 {
            *counts.entry(chars[0].to_string()).or_default() += n;
            for c in &chars[1..] {
                *counts.entry(format!("{CONTINUATION}{c}")).or_default() += n;
            }
            for len in 2..=MAX_SUFFIX_CHARS.min(chars.len() - 1) {
                let suffix: String = chars[chars.len() - len..].iter().collect();
                *counts.entry(format!("{CONTINUATION}{suffix}")).or_default() += n;
            }
        }
    }

    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(piece, n)| *n >= min_frequency && !RESERVED.contains(&piece.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut pieces: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    pieces.extend(
        ranked
            .into_iter()
            .take(target_size - NUM_RESERVED)
            .map(|(p, _)| p),
    );
    Vocabulary::from_pieces(pieces)
}

/// Greedy longest-match segmentation of one pre-tokenized word.
pub fn wordpiece(word: &str, vocab: &Vocabulary) -> Vec<u32> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() > MAX_WORD_CHARS {
        return vec![UNK_ID];
    }
    let mut ids = Vec::new();
    let mut start = 0;
    let mut candidate = String::new();
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&candidate) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                ids.push(id);
                start = end;
            }
            None => return vec![UNK_ID],
        }
    }
    ids
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<u32> {
    pre_tokenize(text)
        .iter()
        .flat_map(|w| wordpiece(w, vocab))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub type_ids: Vec<u8>,
    pub overflow: bool,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn valid_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }
}

/// `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`, padded to `max_len`.
///
/// Pairs are truncated longest-first (the longer segment loses its last
/// piece, `b` on ties) and need `max_len >= 5` so both segments keep at
/// least one piece. For pairs every position after the first `[SEP]`,
/// padding included, has type id 1.
pub fn encode(
    text_a: &str,
    text_b: Option<&str>,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenizedSequence> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} leaves no room for [CLS]/[SEP]")));
    }
    let mut a = tokenize(text_a, vocab);
    let mut b = text_b.map(|t| tokenize(t, vocab));
    let mut overflow = false;

    match &mut b {
        None => {
            if a.len() > max_len - 2 {
                a.truncate(max_len - 2);
                overflow = true;
            }
        }
        Some(b) => {
            if max_len < 5 {
                return Err(Error::Config(format!(
                    "max_len {max_len} is too short for a sequence pair (need 5)"
                )));
            }
            let budget = max_len - 3;
            while a.len() + b.len() > budget {
                overflow = true;
                if a.len() > b.len() {
                    a.pop();
                } else {
                    b.pop();
                }
            }
        }
    }

    let mut ids = Vec::with_capacity(max_len);
    let mut type_ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(&a);
    ids.push(SEP_ID);
    type_ids.resize(ids.len(), 0);
    let pad_type = if let Some(b) = &b {
        ids.extend(b);
        ids.push(SEP_ID);
        type_ids.resize(ids.len(), 1);
        1
    } else {
        0
    };
    let attention_mask: Vec<u8> = (0..max_len).map(|i| u8::from(i < ids.len())).collect();
    ids.resize(max_len, PAD_ID);
    type_ids.resize(max_len, pad_type);
    Ok(TokenizedSequence {
        ids,
        attention_mask,
        type_ids,
        overflow,
    })
}

/// Inverse of [`encode`] up to normalization: drops `[PAD]`, `[CLS]` and
/// `[SEP]`, glues `##` pieces to their predecessor.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for &id in ids {
        let piece = vocab
            .piece(id)
            .ok_or_else(|| Error::Vocab(format!("id {id} out of range for {} pieces", vocab.len())))?;
        if matches!(id, PAD_ID | CLS_ID | SEP_ID) {
            continue;
        }
        match piece.strip_prefix(CONTINUATION) {
            Some(rest) if !rest.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(piece);
            }
        }
    }
    Ok(out)
}
