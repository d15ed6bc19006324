use std::fs::File;
use std::io::BufReader;

use kdforge_core::data::{
    balance_upsample, class_counts, preprocess_adhd, save_examples, stratified_split, PreprocessConfig,
};
use kdforge_core::rng::streams;
use kdforge_core::{Error, Result, RngState};
use serde::Serialize;

use super::{ensure_dir, write_json};
use crate::args::PreprocessArgs;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PreprocessSummary {
    pub raw: usize,
    pub malformed: usize,
    pub other_subreddit: usize,
    pub removed: usize,
    pub filtered: usize,
    pub mild: usize,
    pub severe: usize,
    pub balanced: usize,
    pub train: usize,
    pub test: usize,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

pub fn preprocess(args: &PreprocessArgs) -> Result<PreprocessSummary> {
    if !(args.test_fraction > 0.0 && args.test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {} not in (0, 1)", args.test_fraction)));
    }
    let file = File::open(&args.input).map_err(|e| Error::Input(format!("{}: {e}", args.input.display())))?;
    let config = PreprocessConfig {
        target_subreddit: args.subreddit.clone(),
        ..PreprocessConfig::default()
    };
    let (examples, stats) = preprocess_adhd(BufReader::new(file), &config)?;
    if examples.is_empty() {
        return Err(Error::Input(format!(
            "no records survived filtering ({} read, {} other subreddit, {} removed)",
            stats.lines, stats.other_subreddit, stats.removed
        )));
    }

    let root = RngState::new(args.common.seed);
    let balanced = if args.no_balance {
        examples
    } else {
        balance_upsample(&examples, &mut root.fork(streams::DATA))?
    };
    let split = stratified_split(&balanced, args.test_fraction, &mut root.fork2(streams::DATA, 1))?;
    debug_assert_eq!(class_counts(&split.test)?, split.test_counts);

    ensure_dir(&args.common.out_dir)?;
    save_examples(args.common.out_dir.join(TRAIN_FILE), &split.train)?;
    save_examples(args.common.out_dir.join(TEST_FILE), &split.test)?;
    let summary = PreprocessSummary {
        raw: stats.lines,
        malformed: stats.malformed,
        other_subreddit: stats.other_subreddit,
        removed: stats.removed,
        filtered: stats.kept,
        mild: stats.mild,
        severe: stats.severe,
        balanced: balanced.len(),
        train: split.train.len(),
        test: split.test.len(),
        train_counts: split.train_counts.clone(),
        test_counts: split.test_counts.clone(),
    };
    write_json(&args.common.out_dir.join(SUMMARY_FILE), &summary)?;
    println!(
        "records {} -> filtered {} (mild {}, severe {}) -> balanced {} -> train {} / test {}",
        summary.raw, summary.filtered, summary.mild, summary.severe, summary.balanced, summary.train, summary.test
    );
    println!("test classes {:?}, train classes {:?}", summary.test_counts, summary.train_counts);
    Ok(summary)
}
