//! Classification metrics with micro and macro aggregation.
//!
//! Every ratio with a zero denominator is reported as 0.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Accumulates one binary decision.
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.positives() + self.negatives())
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.tn + o.tn, self.fn_ + o.fn_)
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `(precision, recall, F1)`.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    (p, r, harmonic(p, r))
}

/// `(TPR, TNR)`.
pub fn tpr_tnr(c: &ConfusionCounts) -> (f64, f64) {
    (ratio(c.tp, c.positives()), ratio(c.tn, c.negatives()))
}

/// Fraction of samples whose true label is among the first `k` entries of
/// its ranking. `k` is clamped to the ranking length.
pub fn hit_at_k(rankings: &[Vec<usize>], truth: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::UndefinedMetric("hit@k needs k >= 1"));
    }
    if rankings.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: rankings.len(),
            got: truth.len(),
        });
    }
    if rankings.is_empty() {
        return Err(Error::UndefinedMetric("hit@k over no samples"));
    }
    let hits = rankings
        .iter()
        .zip(truth)
        .filter(|(r, t)| r[..k.min(r.len())].contains(t))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// Indices of `scores` from best to worst for ascending-is-better scores
/// (energies). Ties go to the lower index.
pub fn rank_ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Best-F1 decision threshold found by sweeping sorted scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSweep {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub f1: f64,
}

impl ThresholdSweep {
    /// Samples with `score <= threshold` are predicted positive. Candidate
    /// thresholds are one below the minimum, the midpoints between
    /// consecutive distinct scores, and the maximum. The first candidate with
    /// the best F1 wins.
    pub fn lower_is_positive(pos: &[f64], neg: &[f64]) -> Self {
        let mut scored: Vec<(f64, bool)> = pos
            .iter()
            .map(|&s| (s, true))
            .chain(neg.iter().map(|&s| (s, false)))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut counts = ConfusionCounts::new(0, 0, neg.len() as u64, pos.len() as u64);
        let start = scored.first().map_or(0.0, |s| s.0 - 1.0);
        let mut best = Self {
            threshold: start,
            counts,
            f1: 0.0,
        };
        let mut i = 0;
        while i < scored.len() {
            let v = scored[i].0;
            while i < scored.len() && scored[i].0 == v {
                if scored[i].1 {
                    counts.tp += 1;
                    counts.fn_ -= 1;
                } else {
                    counts.fp += 1;
                    counts.tn -= 1;
                }
                i += 1;
            }
            let threshold = scored.get(i).map_or(v, |next| 0.5 * (v + next.0));
            let f1 = precision_recall_f1(&counts).2;
            if f1 > best.f1 {
                best = Self {
                    threshold,
                    counts,
                    f1,
                };
            }
        }
        best
    }

    /// Samples with `score >= threshold` are predicted positive.
    pub fn higher_is_positive(pos: &[f64], neg: &[f64]) -> Self {
        let flip = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
        let mut s = Self::lower_is_positive(&flip(pos), &flip(neg));
        s.threshold = -s.threshold;
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Tpr,
    Tnr,
    Accuracy,
}

impl Metric {
    pub fn of(self, c: &ConfusionCounts) -> f64 {
        let (p, r, f1) = precision_recall_f1(c);
        let (tpr, tnr) = tpr_tnr(c);
        match self {
            Metric::Precision => p,
            Metric::Recall => r,
            Metric::F1 => f1,
            Metric::Tpr => tpr,
            Metric::Tnr => tnr,
            Metric::Accuracy => c.accuracy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    /// Unweighted mean of per-label metrics.
    Macro,
    /// Metric of the summed counts.
    Micro,
}

pub fn aggregate(per_label: &[ConfusionCounts], metric: Metric, mode: Averaging) -> Result<f64> {
    if per_label.is_empty() {
        return Err(Error::UndefinedMetric("aggregate over an empty label set"));
    }
    Ok(match mode {
        Averaging::Macro => {
            per_label.iter().map(|c| metric.of(c)).sum::<f64>() / per_label.len() as f64
        }
        Averaging::Micro => metric.of(&per_label.iter().copied().sum()),
    })
}

/// Per-label counts for single-label predictions over `n_classes` classes.
pub fn single_label_counts(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<ConfusionCounts> {
    let mut out = vec![ConfusionCounts::default(); n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            out[t].tp += 1;
        } else {
            if p < n_classes {
                out[p].fp += 1;
            }
            out[t].fn_ += 1;
        }
    }
    let n = pred.len() as u64;
    for c in &mut out {
        c.tn = n - c.tp - c.fp - c.fn_;
    }
    out
}
