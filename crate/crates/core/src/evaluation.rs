//! Scoring of predicted segmentation points and multi-class metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame tolerance for counting a predicted point as a hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub delta: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { delta: 30 }
    }
}

impl MatchConfig {
    pub fn new(delta: usize) -> Result<Self> {
        if delta == 0 {
            return Err(Error::arg("delta must be at least 1 frame"));
        }
        Ok(Self { delta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(pred, truth)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// One-to-one greedy matching by increasing distance, ties to the earlier
/// truth point, then the earlier prediction.
pub fn match_points(pred: &[usize], truth: &[usize], cfg: &MatchConfig) -> MatchResult {
    if pred.is_empty() && truth.is_empty() {
        return MatchResult {
            matches: Vec::new(),
            recall: 1.0,
            precision: 1.0,
            f1: 1.0,
        };
    }
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (ti, &t) in truth.iter().enumerate() {
        for (pi, &p) in pred.iter().enumerate() {
            let d = p.abs_diff(t);
            if d <= cfg.delta {
                pairs.push((d, ti, pi));
            }
        }
    }
    pairs.sort_unstable();
    let mut pred_used = vec![false; pred.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (_, ti, pi) in pairs {
        if !pred_used[pi] && !truth_used[ti] {
            pred_used[pi] = true;
            truth_used[ti] = true;
            matches.push((pred[pi], truth[ti]));
        }
    }
    matches.sort_unstable_by_key(|m| m.1);
    let m = matches.len() as f64;
    let recall = if truth.is_empty() { 0.0 } else { m / truth.len() as f64 };
    let precision = if pred.is_empty() { 0.0 } else { m / pred.len() as f64 };
    MatchResult {
        matches,
        recall,
        precision,
        f1: f1_score(precision, recall),
    }
}

/// Square count matrix; rows are true classes, columns predicted ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 {
            return Err(Error::arg("confusion matrix must have at least one class"));
        }
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::arg("confusion matrix must be square"));
        }
        Ok(Self { counts })
    }

    /// Tallies `(truth, predicted)` label pairs over classes `1..=n_classes`.
    pub fn from_labels(truth: &[u8], pred: &[u8], n_classes: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::arg("label sequences differ in length"));
        }
        let mut counts = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t == 0 || p == 0 || t > n_classes || p > n_classes {
                return Err(Error::arg(format!("label outside 1..={n_classes}")));
            }
            counts[t - 1][p - 1] += 1;
        }
        Self::new(counts)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tp(&self, i: usize) -> u64 {
        self.counts[i][i]
    }

    pub fn fp(&self, i: usize) -> u64 {
        self.col_sum(i) - self.tp(i)
    }

    pub fn fn_(&self, i: usize) -> u64 {
        self.row_sum(i) - self.tp(i)
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn check(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Undefined("confusion matrix has no counts".into()));
        }
        Ok(())
    }

    /// Classes that occur in the truth or the prediction.
    fn present(&self) -> Vec<usize> {
        (0..self.n_classes())
            .filter(|&i| self.row_sum(i) + self.col_sum(i) > 0)
            .collect()
    }

    /// Per-class precision; 0 when nothing was predicted as the class.
    pub fn class_precision(&self, i: usize) -> f64 {
        ratio(self.tp(i), self.tp(i) + self.fp(i))
    }

    /// Per-class recall; 0 when the class never occurs in the truth.
    pub fn class_recall(&self, i: usize) -> f64 {
        ratio(self.tp(i), self.tp(i) + self.fn_(i))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
}

/// Pooled counts over all classes.
pub fn micro_metrics(cm: &ConfusionMatrix) -> Result<PrecisionRecall> {
    cm.check()?;
    let n = cm.n_classes();
    let tp: u64 = (0..n).map(|i| cm.tp(i)).sum();
    let fp: u64 = (0..n).map(|i| cm.fp(i)).sum();
    let fn_: u64 = (0..n).map(|i| cm.fn_(i)).sum();
    Ok(PrecisionRecall {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}

/// Unweighted mean of per-class scores over the classes present.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<PrecisionRecall> {
    cm.check()?;
    let present = cm.present();
    let k = present.len() as f64;
    Ok(PrecisionRecall {
        precision: present.iter().map(|&i| cm.class_precision(i)).sum::<f64>() / k,
        recall: present.iter().map(|&i| cm.class_recall(i)).sum::<f64>() / k,
    })
}

/// Per-class scores weighted by each class's share of the truth.
pub fn weighted_metrics(cm: &ConfusionMatrix) -> Result<PrecisionRecall> {
    cm.check()?;
    let total = cm.total() as f64;
    let n = cm.n_classes();
    let w = |i: usize| cm.row_sum(i) as f64 / total;
    Ok(PrecisionRecall {
        precision: (0..n).map(|i| w(i) * cm.class_precision(i)).sum(),
        recall: (0..n).map(|i| w(i) * cm.class_recall(i)).sum(),
    })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check()?;
    let tp: u64 = (0..cm.n_classes()).map(|i| cm.tp(i)).sum();
    Ok(tp as f64 / cm.total() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl From<&MatchResult> for Scores {
    fn from(m: &MatchResult) -> Self {
        Self {
            recall: m.recall,
            precision: m.precision,
            f1: m.f1,
        }
    }
}

/// Unweighted mean of per-trial scores.
pub fn mean_scores(scores: &[Scores]) -> Option<Scores> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(Scores {
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}
