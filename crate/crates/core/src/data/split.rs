use rand::seq::SliceRandom;
use rand::Rng;

use super::LabeledExample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

/// Per-class counts; the vector is as long as the largest label plus one.
pub fn class_counts(examples: &[LabeledExample]) -> Result<Vec<usize>> {
    let mut counts = Vec::new();
    for ex in examples {
        let c = ex.label.class()?;
        if counts.len() <= c {
            counts.resize(c + 1, 0);
        }
        counts[c] += 1;
    }
    Ok(counts)
}

fn indices_by_class(examples: &[LabeledExample]) -> Result<Vec<Vec<usize>>> {
    let mut by_class: Vec<Vec<usize>> = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let c = ex.label.class()?;
        if by_class.len() <= c {
            by_class.resize(c + 1, Vec::new());
        }
        by_class[c].push(i);
    }
    Ok(by_class)
}

/// Resamples every smaller class with replacement up to the size of the
/// largest, keeping all originals, then shuffles.
pub fn balance_upsample<R: Rng + ?Sized>(
    examples: &[LabeledExample],
    rng: &mut R,
) -> Result<Vec<LabeledExample>> {
    let by_class = indices_by_class(examples)?;
    let present = by_class.iter().filter(|c| !c.is_empty()).count();
    if present < 2 {
        return Err(Error::Balance(format!("need at least two classes, found {present}")));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out: Vec<LabeledExample> = examples.to_vec();
    for members in by_class.iter().filter(|c| !c.is_empty()) {
        for _ in members.len()..target {
            let pick = members[rng.random_range(0..members.len())];
            out.push(examples[pick].clone());
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Test size is `ceil(fraction·N)`, shared between classes by largest
/// remainder (lower class index wins ties); members are drawn uniformly
/// without replacement. Both halves keep the input order.
pub fn stratified_split<R: Rng + ?Sized>(
    examples: &[LabeledExample],
    test_fraction: f64,
    rng: &mut R,
) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let by_class = indices_by_class(examples)?;
    let present = by_class.iter().filter(|c| !c.is_empty()).count();
    if present < 2 {
        return Err(Error::Split(format!("need at least two classes, found {present}")));
    }
    let n = examples.len() as u64;
    let test_total = ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as u64;

    let mut quotas: Vec<u64> = Vec::with_capacity(by_class.len());
    let mut remainders: Vec<(u64, usize)> = Vec::with_capacity(by_class.len());
    for (c, members) in by_class.iter().enumerate() {
        let share = test_total * members.len() as u64;
        quotas.push(share / n);
        remainders.push((share % n, c));
    }
    let assigned: u64 = quotas.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in remainders.iter().take((test_total - assigned) as usize) {
        quotas[c] += 1;
    }

    let mut in_test = vec![false; examples.len()];
    for (c, members) in by_class.iter().enumerate() {
        let q = quotas[c] as usize;
        if q > members.len() {
            return Err(Error::Split(format!(
                "class {c} has {} examples but needs {q} for the test set",
                members.len()
            )));
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        for &i in &shuffled[..q] {
            in_test[i] = true;
        }
    }

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ex, &t) in examples.iter().zip(&in_test) {
        if t {
            test.push(ex.clone());
        } else {
            train.push(ex.clone());
        }
    }
    let mut train_counts = class_counts(&train)?;
    let mut test_counts = class_counts(&test)?;
    train_counts.resize(by_class.len(), 0);
    test_counts.resize(by_class.len(), 0);
    Ok(DatasetSplit {
        train,
        test,
        train_counts,
        test_counts,
    })
}
