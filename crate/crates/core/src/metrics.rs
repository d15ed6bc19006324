//! Classification, correlation, and ranking metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Input("confusion matrix must be square and nonempty".into()));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Examples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Examples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Input(format!(
            "{} labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if classes == 0 {
        return Err(Error::Input("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![vec![0u64; classes]; classes];
    for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        for label in [t, p] {
            if label >= classes {
                return Err(Error::Label {
                    index: i,
                    label,
                    classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class and averaged precision/recall/F1. Undefined ratios are reported
/// as 0 and listed in `zero_division`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_avg: Averages,
    pub weighted: Averages,
    /// Classes whose precision or recall had a zero denominator.
    pub zero_division: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<ClassificationSummary> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("empty confusion matrix".into()));
    }
    let k = cm.classes();
    let mut s = ClassificationSummary {
        accuracy: cm.correct() as f64 / total as f64,
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
        support: Vec::with_capacity(k),
        macro_avg: Averages::default(),
        weighted: Averages::default(),
        zero_division: Vec::new(),
    };
    for c in 0..k {
        let tp = cm.counts[c][c];
        let p = ratio(tp, cm.predicted(c));
        let r = ratio(tp, cm.support(c));
        if p.is_none() || r.is_none() {
            s.zero_division.push(c);
        }
        let (p, r) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        s.precision.push(p);
        s.recall.push(r);
        s.f1.push(f);
        s.support.push(cm.support(c));
    }
    let kf = k as f64;
    s.macro_avg = Averages {
        precision: s.precision.iter().sum::<f64>() / kf,
        recall: s.recall.iter().sum::<f64>() / kf,
        f1: s.f1.iter().sum::<f64>() / kf,
    };
    let weigh = |v: &[f64]| -> f64 {
        v.iter().zip(&s.support).map(|(x, &n)| x * n as f64).sum::<f64>() / total as f64
    };
    s.weighted = Averages {
        precision: weigh(&s.precision),
        recall: weigh(&s.recall),
        f1: weigh(&s.f1),
    };
    Ok(s)
}

/// Matthews correlation of a 2×2 matrix; a zero denominator gives 0.
pub fn matthews(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes() != 2 {
        return Err(Error::Input(format!(
            "Matthews correlation needs a 2x2 matrix, got {} classes",
            cm.classes()
        )));
    }
    let tn = cm.counts[0][0] as f64;
    let fp = cm.counts[0][1] as f64;
    let fn_ = cm.counts[1][0] as f64;
    let tp = cm.counts[1][1] as f64;
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    Ok(if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!(
            "correlation needs two equal-length series of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share their mean rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return pearson(x, y);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC over every distinct score (descending, ties in one step) and the
/// trapezoidal area under it.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("ROC scores must be finite".into()));
    }
    let pos = positive.iter().filter(|&&p| p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Input("ROC needs both positive and negative labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("curve starts at the origin");
        let (x1, y1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok(RocCurve { points, auc })
}

/// Evaluation report, serialized with stable top-level keys; absent metrics
/// are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<Vec<f64>>,
    #[serde(rename = "macro", skip_serializing_if = "Option::is_none")]
    pub macro_avg: Option<Averages>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted: Option<Averages>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc_points: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_division: Option<Vec<usize>>,
}

/// Report for class probabilities (`[N][C]`) against true labels. Binary
/// tasks also get MCC and, when both classes occur, ROC for class 1.
pub fn evaluate_classification(probabilities: &[Vec<f64>], truth: &[usize], classes: usize) -> Result<MetricsReport> {
    if probabilities.iter().any(|p| p.len() != classes) {
        return Err(Error::Input(format!("probability rows must have {classes} entries")));
    }
    let predicted: Vec<usize> = probabilities
        .iter()
        .map(|p| (0..classes).fold(0, |b, i| if p[i] > p[b] { i } else { b }))
        .collect();
    let cm = confusion(truth, &predicted, classes)?;
    let s = summarize(&cm)?;
    let mut report = MetricsReport {
        accuracy: Some(s.accuracy),
        precision: Some(s.precision),
        recall: Some(s.recall),
        f1: Some(s.f1),
        macro_avg: Some(s.macro_avg),
        weighted: Some(s.weighted),
        support: Some(s.support),
        zero_division: Some(s.zero_division),
        ..MetricsReport::default()
    };
    if classes == 2 {
        report.mcc = Some(matthews(&cm)?);
        let scores: Vec<f64> = probabilities.iter().map(|p| p[1]).collect();
        let positive: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
        if let Ok(roc) = roc_auc(&scores, &positive) {
            report.auroc = Some(roc.auc);
            report.roc_points = Some(roc.points);
        }
    }
    report.confusion = Some(cm);
    Ok(report)
}

/// Pearson/Spearman report for real-valued predictions.
pub fn evaluate_regression(predictions: &[f64], targets: &[f64]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        pearson: Some(pearson(predictions, targets)?),
        spearman: Some(spearman(predictions, targets)?),
        ..MetricsReport::default()
    })
}
