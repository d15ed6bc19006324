use std::io::BufRead;

use serde::Deserialize;

use super::{Label, LabeledExample};
use crate::error::{Error, Result};

/// One forum post as found in the raw JSON-lines dump.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct RawPost {
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub body: Option<String>,
    pub score: i64,
    pub subreddit: String,
}

impl RawPost {
    pub fn is_removed(&self) -> bool {
        matches!(self.body.as_deref().map(str::trim), Some("[removed]" | "[deleted]"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    pub cap_max: i64,
    pub mild_threshold: i64,
    pub target_subreddit: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cap_max: 5,
            mild_threshold: 2,
            target_subreddit: "ADHD".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PreprocessStats {
    pub lines: usize,
    pub malformed: usize,
    pub other_subreddit: usize,
    pub removed: usize,
    pub kept: usize,
    pub mild: usize,
    pub severe: usize,
}

/// Filters, merges, caps, and labels already-parsed posts.
pub fn preprocess_posts(
    posts: impl IntoIterator<Item = RawPost>,
    config: &PreprocessConfig,
    stats: &mut PreprocessStats,
) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    for post in posts {
        if !post.subreddit.eq_ignore_ascii_case(&config.target_subreddit) {
            stats.other_subreddit += 1;
            continue;
        }
        if post.is_removed() {
            stats.removed += 1;
            continue;
        }
        let score = post.score.clamp(0, config.cap_max);
        let label = u32::from(score > config.mild_threshold);
        if label == 0 {
            stats.mild += 1;
        } else {
            stats.severe += 1;
        }
        let text = format!(
            "{} {}",
            post.title.unwrap_or_default(),
            post.body.unwrap_or_default()
        );
        out.push(LabeledExample::single(text, Label::Class(label)));
        stats.kept += 1;
    }
    out
}

/// Reads raw posts from JSON lines. Malformed lines are skipped and counted;
/// a stream with no parseable line is an input error.
pub fn preprocess_adhd(
    reader: impl BufRead,
    config: &PreprocessConfig,
) -> Result<(Vec<LabeledExample>, PreprocessStats)> {
    let mut stats = PreprocessStats::default();
    let mut posts = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        match serde_json::from_str::<RawPost>(&line) {
            Ok(p) => posts.push(p),
            Err(_) => stats.malformed += 1,
        }
    }
    if stats.lines > 0 && stats.malformed == stats.lines {
        return Err(Error::Input(format!("all {} records are malformed", stats.lines)));
    }
    if stats.lines == 0 {
        return Err(Error::Input("no records".into()));
    }
    let examples = preprocess_posts(posts, config, &mut stats);
    Ok((examples, stats))
}
