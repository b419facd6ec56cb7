//! Hierarchy-aware classifier heads over linear logits.
//!
//! * `hab` — one sigmoid per label, multi-label soft-margin loss.
//! * `plc` — one softmax per level.
//! * `mc` — a single softmax over leaves; inner nodes sum their children.
//! * `mplc` — per-level softmax masked to the children of the parent.
//! * `hs` — one softmax per sibling group, multiplied along the path.
//!
//! Targets are root-to-leaf paths of node indices, one per level.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::joint::{FeatureMatrix, InstanceSplit};
use crate::metrics::{self, ConfusionCounts, ThresholdSweep};
use crate::optim::Adam;
use crate::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Hab,
    Plc,
    Mc,
    Mplc,
    Hs,
}

impl HeadKind {
    pub const ALL: [HeadKind; 5] = [HeadKind::Hab, HeadKind::Plc, HeadKind::Mc, HeadKind::Mplc, HeadKind::Hs];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Hab => "hab",
            HeadKind::Plc => "plc",
            HeadKind::Mc => "mc",
            HeadKind::Mplc => "mplc",
            HeadKind::Hs => "hs",
        }
    }

    pub fn output_width(self, layout: &HeadLayout) -> usize {
        match self {
            HeadKind::Mc => layout.levels.last().map_or(0, |r| r.len()),
            _ => layout.n,
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown head '{s}'")))
    }
}

/// Logit layouts derived from a hierarchy.
#[derive(Debug, Clone)]
pub struct HeadLayout {
    n: usize,
    levels: Vec<Range<usize>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Sibling groups: the roots first, then the children of each parent in
    /// ascending parent node-id order.
    groups: Vec<Vec<usize>>,
    /// Position of each node in the grouped logit vector.
    hs_pos: Vec<usize>,
    hs_group: Vec<usize>,
    /// Leaf offsets (within the last level) under each node; empty when some
    /// leaf is above the last level.
    leaves_under: Vec<Vec<usize>>,
}

impl HeadLayout {
    pub fn new(h: &Hierarchy) -> Self {
        let n = h.len();
        let levels = h.level_ranges().to_vec();
        let parent: Vec<Option<usize>> = (0..n).map(|i| h.parent(i)).collect();
        let children: Vec<Vec<usize>> = (0..n).map(|i| h.children(i).to_vec()).collect();

        let mut parents: Vec<usize> = (0..n).filter(|&i| !children[i].is_empty()).collect();
        parents.sort_by_key(|&i| h.id_of(i));
        let mut groups = vec![h.roots().collect::<Vec<_>>()];
        groups.extend(parents.iter().map(|&p| children[p].clone()));
        let mut hs_pos = vec![0; n];
        let mut hs_group = vec![0; n];
        let mut at = 0;
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                hs_pos[m] = at;
                hs_group[m] = g;
                at += 1;
            }
        }

        let mut leaves_under = vec![Vec::new(); n];
        if h.leaves_on_last_level() {
            if let Some(last) = levels.last() {
                for leaf in last.clone() {
                    let mut node = Some(leaf);
                    while let Some(v) = node {
                        leaves_under[v].push(leaf - last.start);
                        node = parent[v];
                    }
                }
            }
        }
        Self {
            n,
            levels,
            parent,
            children,
            groups,
            hs_pos,
            hs_group,
            leaves_under,
        }
    }

    pub fn n_labels(&self) -> usize {
        self.n
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> Range<usize> {
        self.levels[i].clone()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Logit index of `node` in the sibling-group layout.
    pub fn group_position(&self, node: usize) -> usize {
        self.hs_pos[node]
    }

    fn group_range(&self, node: usize) -> Range<usize> {
        let g = &self.groups[self.hs_group[node]];
        let start = self.hs_pos[g[0]];
        start..start + g.len()
    }

    fn full_depth(&self) -> bool {
        self.levels.first().is_none_or(|r| r.clone().all(|i| !self.leaves_under[i].is_empty()))
    }

    /// Checks that `path` names one node per level, each the child of the
    /// previous one.
    pub fn check_path(&self, path: &[usize]) -> Result<()> {
        if path.len() != self.levels.len() {
            return Err(Error::Inconsistent(format!(
                "target path has {} levels, hierarchy has {}",
                path.len(),
                self.levels.len()
            )));
        }
        for (i, (&t, r)) in path.iter().zip(&self.levels).enumerate() {
            if !r.contains(&t) {
                return Err(Error::LabelOutOfRange {
                    label: t,
                    width: r.len(),
                });
            }
            if i > 0 && self.parent[t] != Some(path[i - 1]) {
                return Err(Error::Inconsistent(format!("node {t} is not a child of {}", path[i - 1])));
            }
        }
        Ok(())
    }

    fn check_width(&self, x: &[f64], expected: usize) -> Result<()> {
        if x.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn log_sum_exp(x: &[f64], idx: impl Iterator<Item = usize> + Clone) -> f64 {
    let m = idx.clone().map(|i| x[i]).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + idx.map(|i| (x[i] - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x, 0..x.len());
    x.iter().map(|v| (v - lse).exp()).collect()
}

/// Cross-entropy of `target` among the logits at `support`, adding the
/// gradient into `grad`.
fn masked_ce(x: &[f64], support: &[usize], target: usize, grad: &mut [f64]) -> f64 {
    let lse = log_sum_exp(x, support.iter().copied());
    for &j in support {
        grad[j] += (x[j] - lse).exp();
    }
    grad[target] -= 1.0;
    lse - x[target]
}

fn argmax(x: &[f64], support: impl Iterator<Item = usize>) -> usize {
    let mut best: Option<usize> = None;
    for j in support {
        if best.is_none_or(|b| x[j] > x[b]) {
            best = Some(j);
        }
    }
    best.expect("non-empty support")
}

fn log_sigmoid(x: f64) -> f64 {
    -((-x.abs()).exp().ln_1p() + (-x).max(0.0))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean over labels of `−[y log σ(x) + (1 − y) log(1 − σ(x))]`.
pub fn hab_loss(x: &[f64], y: &[bool]) -> Result<(f64, Vec<f64>)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mut loss = 0.0;
    let grad = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            loss -= if yi { log_sigmoid(xi) } else { log_sigmoid(-xi) };
            (sigmoid(xi) - if yi { 1.0 } else { 0.0 }) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Sum over levels of softmax cross-entropy within each level's segment.
pub fn plc_loss(x: &[f64], layout: &HeadLayout, path: &[usize]) -> Result<(f64, Vec<f64>)> {
    layout.check_width(x, layout.n)?;
    layout.check_path(path)?;
    let mut grad = vec![0.0; x.len()];
    let mut loss = 0.0;
    for (r, &t) in layout.levels.iter().zip(path) {
        let support: Vec<usize> = r.clone().collect();
        loss += masked_ce(x, &support, t, &mut grad);
    }
    Ok((loss, grad))
}

/// Per-node probabilities from leaf logits: a softmax over the last level,
/// summed bottom-up into every ancestor.
pub fn mc_probabilities(leaf_logits: &[f64], layout: &HeadLayout) -> Result<Vec<f64>> {
    let last = layout.levels.last().cloned().unwrap_or(0..0);
    layout.check_width(leaf_logits, last.len())?;
    if !layout.full_depth() {
        return Err(Error::Structure("leaf-softmax head needs every leaf on the last level".into()));
    }
    let mut p = vec![0.0; layout.n];
    p[last.clone()].copy_from_slice(&softmax(leaf_logits));
    for r in layout.levels.iter().rev().skip(1) {
        for v in r.clone() {
            p[v] = layout.children[v].iter().map(|&c| p[c]).sum();
        }
    }
    Ok(p)
}

/// `Σ_i −log p_i[τ_i]`, each term evaluated as a difference of log-sum-exps
/// over the leaves and over the leaves below `τ_i`.
pub fn mc_loss(leaf_logits: &[f64], layout: &HeadLayout, path: &[usize]) -> Result<(f64, Vec<f64>)> {
    let last = layout.levels.last().cloned().unwrap_or(0..0);
    layout.check_width(leaf_logits, last.len())?;
    layout.check_path(path)?;
    if !layout.full_depth() {
        return Err(Error::Structure("leaf-softmax head needs every leaf on the last level".into()));
    }
    let x = leaf_logits;
    let full = softmax(x);
    let lse_all = log_sum_exp(x, 0..x.len());
    let mut grad = vec![0.0; x.len()];
    let mut loss = 0.0;
    for &t in path {
        let under = &layout.leaves_under[t];
        let lse_t = log_sum_exp(x, under.iter().copied());
        loss += lse_all - lse_t;
        for (g, f) in grad.iter_mut().zip(&full) {
            *g += f;
        }
        for &j in under {
            grad[j] -= (x[j] - lse_t).exp();
        }
    }
    Ok((loss, grad))
}

/// Per-level cross-entropy restricted to the children of the ground-truth
/// parent; the first level is unrestricted.
pub fn mplc_loss(x: &[f64], layout: &HeadLayout, path: &[usize]) -> Result<(f64, Vec<f64>)> {
    layout.check_width(x, layout.n)?;
    layout.check_path(path)?;
    let mut grad = vec![0.0; x.len()];
    let mut loss = 0.0;
    for (i, &t) in path.iter().enumerate() {
        let support: Vec<usize> = if i == 0 {
            layout.levels[0].clone().collect()
        } else {
            layout.children[path[i - 1]].clone()
        };
        loss += masked_ce(x, &support, t, &mut grad);
    }
    Ok((loss, grad))
}

/// Top-down decoding: each level's argmax is taken among the children of the
/// level above's prediction.
pub fn mplc_predict(x: &[f64], layout: &HeadLayout) -> Result<Vec<usize>> {
    layout.check_width(x, layout.n)?;
    let mut out: Vec<usize> = Vec::with_capacity(layout.levels.len());
    for (i, r) in layout.levels.iter().enumerate() {
        let pick = match out.last() {
            Some(&p) if i > 0 && !layout.children[p].is_empty() => {
                argmax(x, layout.children[p].iter().copied())
            }
            _ => argmax(x, r.clone()),
        };
        out.push(pick);
    }
    Ok(out)
}

pub fn plc_predict(x: &[f64], layout: &HeadLayout) -> Result<Vec<usize>> {
    layout.check_width(x, layout.n)?;
    Ok(layout.levels.iter().map(|r| argmax(x, r.clone())).collect())
}

pub fn mc_predict(leaf_logits: &[f64], layout: &HeadLayout) -> Result<Vec<usize>> {
    let p = mc_probabilities(leaf_logits, layout)?;
    Ok(layout.levels.iter().map(|r| argmax(&p, r.clone())).collect())
}

/// Sibling-group softmax outputs, indexed by node.
#[derive(Debug, Clone, PartialEq)]
pub struct HsProbs {
    /// `P(node | parent)`.
    pub conditional: Vec<f64>,
    /// Product of conditionals from the root down to the node.
    pub joint: Vec<f64>,
}

pub fn hs_probabilities(x: &[f64], layout: &HeadLayout) -> Result<HsProbs> {
    layout.check_width(x, layout.n)?;
    let mut conditional = vec![0.0; layout.n];
    for g in &layout.groups {
        let seg: Vec<f64> = g.iter().map(|&v| x[layout.hs_pos[v]]).collect();
        for (&v, p) in g.iter().zip(softmax(&seg)) {
            conditional[v] = p;
        }
    }
    let mut joint = vec![0.0; layout.n];
    for r in &layout.levels {
        for v in r.clone() {
            joint[v] = conditional[v] * layout.parent[v].map_or(1.0, |p| joint[p]);
        }
    }
    Ok(HsProbs { conditional, joint })
}

/// `−log` of the path's joint probability: the sum of the group
/// cross-entropies along the path.
pub fn hs_loss(x: &[f64], layout: &HeadLayout, path: &[usize]) -> Result<(f64, Vec<f64>)> {
    layout.check_width(x, layout.n)?;
    layout.check_path(path)?;
    let mut grad = vec![0.0; x.len()];
    let mut loss = 0.0;
    for &t in path {
        let support: Vec<usize> = layout.group_range(t).collect();
        loss += masked_ce(x, &support, layout.hs_pos[t], &mut grad);
    }
    Ok((loss, grad))
}

pub fn hs_predict(x: &[f64], layout: &HeadLayout) -> Result<Vec<usize>> {
    let p = hs_probabilities(x, layout)?;
    Ok(layout.levels.iter().map(|r| argmax(&p.joint, r.clone())).collect())
}

/// Multi-hot target over all labels for a path.
pub fn multi_hot(layout: &HeadLayout, path: &[usize]) -> Vec<bool> {
    let mut y = vec![false; layout.n];
    for &t in path {
        y[t] = true;
    }
    y
}

/// Loss and logit gradient of any head for one sample.
pub fn head_loss(kind: HeadKind, x: &[f64], layout: &HeadLayout, path: &[usize]) -> Result<(f64, Vec<f64>)> {
    match kind {
        HeadKind::Hab => {
            layout.check_path(path)?;
            hab_loss(x, &multi_hot(layout, path))
        }
        HeadKind::Plc => plc_loss(x, layout, path),
        HeadKind::Mc => mc_loss(x, layout, path),
        HeadKind::Mplc => mplc_loss(x, layout, path),
        HeadKind::Hs => hs_loss(x, layout, path),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// One threshold shared by every label.
    Ofadb,
    /// One threshold per label.
    Pcdb,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ofadb" => Ok(ThresholdMode::Ofadb),
            "pcdb" => Ok(ThresholdMode::Pcdb),
            other => Err(Error::Format(format!("unknown threshold mode '{other}'"))),
        }
    }
}

/// Decision thresholds on sigmoid scores; a label is predicted when its
/// score is at least the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Thresholds {
    Single(f64),
    PerLabel(Vec<f64>),
}

impl Thresholds {
    pub fn for_label(&self, j: usize) -> f64 {
        match self {
            Thresholds::Single(t) => *t,
            Thresholds::PerLabel(v) => v[j],
        }
    }
}

/// Chooses thresholds maximizing micro-F1 (pooled) or each label's F1.
pub fn select_thresholds(scores: &[Vec<f64>], targets: &[Vec<bool>], mode: ThresholdMode) -> Result<Thresholds> {
    if scores.is_empty() || scores.len() != targets.len() {
        return Err(Error::UndefinedMetric("threshold selection needs a non-empty validation set"));
    }
    let width = scores[0].len();
    let split = |col: Option<usize>| {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (s, t) in scores.iter().zip(targets) {
            for j in col.map_or(0..width, |c| c..c + 1) {
                if t[j] {
                    pos.push(s[j]);
                } else {
                    neg.push(s[j]);
                }
            }
        }
        (pos, neg)
    };
    Ok(match mode {
        ThresholdMode::Ofadb => {
            let (pos, neg) = split(None);
            Thresholds::Single(ThresholdSweep::higher_is_positive(&pos, &neg).threshold)
        }
        ThresholdMode::Pcdb => Thresholds::PerLabel(
            (0..width)
                .map(|j| {
                    let (pos, neg) = split(Some(j));
                    ThresholdSweep::higher_is_positive(&pos, &neg).threshold
                })
                .collect(),
        ),
    })
}

/// Statistics of the number of labels predicted per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn count_stats(predictions: &[Vec<bool>]) -> Result<CountStats> {
    if predictions.is_empty() {
        return Err(Error::UndefinedMetric("no predictions"));
    }
    let counts: Vec<usize> = predictions.iter().map(|p| p.iter().filter(|b| **b).count()).collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(CountStats {
        min: *counts.iter().min().unwrap(),
        max: *counts.iter().max().unwrap(),
        mean,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImbalancePolicy {
    None,
    ClassWeights,
    Resample,
}

impl std::str::FromStr for ImbalancePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ImbalancePolicy::None),
            "class-weights" => Ok(ImbalancePolicy::ClassWeights),
            "resample" => Ok(ImbalancePolicy::Resample),
            other => Err(Error::Format(format!("unknown imbalance policy '{other}'"))),
        }
    }
}

/// Inverse-frequency weights `N / (C · n_c)` over the `C` labels present.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: BTreeMap<usize, f64>,
}

impl ClassWeights {
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::UndefinedMetric("class weights need at least one sample"));
        }
        let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in labels {
            *freq.entry(l).or_default() += 1;
        }
        let n = labels.len() as f64;
        let c = freq.len() as f64;
        let weights = freq.into_iter().map(|(l, k)| (l, n / (c * k as f64))).collect();
        Ok(Self { weights })
    }

    pub fn get(&self, label: usize) -> Result<f64> {
        self.weights
            .get(&label)
            .copied()
            .ok_or_else(|| Error::Inconsistent(format!("label {label} has zero training frequency")))
    }

    /// Per-sample weights for resampling: each sample's label weight.
    pub fn sample_weights(&self, labels: &[usize]) -> Result<Vec<f64>> {
        labels.iter().map(|&l| self.get(l)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub kind: HeadKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub init_std: f64,
    pub imbalance: ImbalancePolicy,
    pub threshold_mode: ThresholdMode,
    pub seed: u64,
}

impl ClassifierConfig {
    /// Adam for 100 epochs, lr 1e-2, batch 64, weights ~ N(0, 0.01²).
    pub fn new(kind: HeadKind) -> Self {
        Self {
            kind,
            epochs: 100,
            batch_size: 64,
            lr: 1e-2,
            init_std: 0.01,
            imbalance: ImbalancePolicy::None,
            threshold_mode: ThresholdMode::Ofadb,
            seed: 0,
        }
    }
}

/// Linear logits `Wᵀ row + b` with `W` stored as `D × width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub kind: HeadKind,
    input: usize,
    output: usize,
    /// Weights followed by the bias.
    params: Vec<f64>,
    pub thresholds: Option<Thresholds>,
}

impl LinearClassifier {
    pub fn new<R: rand::Rng + ?Sized>(kind: HeadKind, input: usize, output: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut params: Vec<f64> = (0..input * output).map(|_| normal.sample(rng)).collect();
        params.resize(input * output + output, 0.0);
        Self {
            kind,
            input,
            output,
            params,
            thresholds: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn logits(&self, row: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.input * self.output);
        let mut out = b.to_vec();
        for (x, wrow) in row.iter().zip(w.chunks(self.output)) {
            for (o, wv) in out.iter_mut().zip(wrow) {
                *o += x * wv;
            }
        }
        out
    }

    fn accumulate(&self, row: &[f64], g: &[f64], scale: f64, out: &mut [f64]) {
        let (w, b) = out.split_at_mut(self.input * self.output);
        for (x, wrow) in row.iter().zip(w.chunks_mut(self.output)) {
            for (o, gv) in wrow.iter_mut().zip(g) {
                *o += scale * x * gv;
            }
        }
        for (o, gv) in b.iter_mut().zip(g) {
            *o += scale * gv;
        }
    }

    /// Predicted label set over all nodes. Single-label heads predict one
    /// node per level; `hab` predicts every label whose sigmoid score clears
    /// its threshold (0.5 when none were selected).
    pub fn predict(&self, layout: &HeadLayout, row: &[f64]) -> Result<Vec<bool>> {
        let x = self.logits(row);
        let path = match self.kind {
            HeadKind::Hab => {
                let th = self.thresholds.clone().unwrap_or(Thresholds::Single(0.5));
                return Ok(x.iter().enumerate().map(|(j, &v)| sigmoid(v) >= th.for_label(j)).collect());
            }
            HeadKind::Plc => plc_predict(&x, layout)?,
            HeadKind::Mc => mc_predict(&x, layout)?,
            HeadKind::Mplc => mplc_predict(&x, layout)?,
            HeadKind::Hs => hs_predict(&x, layout)?,
        };
        Ok(multi_hot(layout, &path))
    }
}

/// Per-level micro-F1 plus two whole-hierarchy aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub level_f1: Vec<f64>,
    /// Micro-F1 with every label of every level counted jointly.
    pub m_f1: f64,
    /// Mean of the per-level micro-F1 values.
    pub m_f1_level_mean: f64,
    /// Predicted-label count statistics (multi-label head only).
    pub counts: Option<CountStats>,
}

pub fn evaluate_predictions(layout: &HeadLayout, predicted: &[Vec<bool>], paths: &[Vec<usize>], multi_label: bool) -> Result<ClassifierEval> {
    if predicted.is_empty() {
        return Err(Error::UndefinedMetric("no samples to evaluate"));
    }
    let mut per_label = vec![ConfusionCounts::default(); layout.n];
    for (pred, path) in predicted.iter().zip(paths) {
        let truth = multi_hot(layout, path);
        for j in 0..layout.n {
            per_label[j].record(pred[j], truth[j]);
        }
    }
    let level_f1: Vec<f64> = layout
        .levels
        .iter()
        .map(|r| metrics::aggregate(&per_label[r.clone()], metrics::Metric::F1, metrics::Averaging::Micro))
        .collect::<Result<_>>()?;
    Ok(ClassifierEval {
        m_f1: metrics::aggregate(&per_label, metrics::Metric::F1, metrics::Averaging::Micro)?,
        m_f1_level_mean: level_f1.iter().sum::<f64>() / level_f1.len() as f64,
        level_f1,
        counts: if multi_label { Some(count_stats(predicted)?) } else { None },
    })
}

pub fn evaluate_classifier(clf: &LinearClassifier, layout: &HeadLayout, features: &FeatureMatrix, rows: &[usize], paths: &[Vec<usize>]) -> Result<ClassifierEval> {
    let predicted: Vec<Vec<bool>> = rows
        .par_iter()
        .map(|&r| clf.predict(layout, features.row(r)))
        .collect::<Result<_>>()?;
    let sel: Vec<Vec<usize>> = rows.iter().map(|&r| paths[r].clone()).collect();
    evaluate_predictions(layout, &predicted, &sel, clf.kind == HeadKind::Hab)
}

/// Ground-truth root-to-leaf path of every instance.
pub fn instance_paths(h: &Hierarchy, features: &FeatureMatrix) -> Result<Vec<Vec<usize>>> {
    let paths: Vec<Vec<usize>> = features.leaf_indices(h)?.into_iter().map(|l| h.path(l)).collect();
    if let Some((i, _)) = paths.iter().enumerate().find(|(_, p)| p.len() != h.n_levels()) {
        return Err(Error::Inconsistent(format!(
            "instance {} is not labelled on every level",
            features.ids[i]
        )));
    }
    Ok(paths)
}

fn hab_thresholds(clf: &LinearClassifier, layout: &HeadLayout, features: &FeatureMatrix, rows: &[usize], paths: &[Vec<usize>], mode: ThresholdMode) -> Result<Thresholds> {
    let scores: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| clf.logits(features.row(r)).into_iter().map(sigmoid).collect())
        .collect();
    let targets: Vec<Vec<bool>> = rows.iter().map(|&r| multi_hot(layout, &paths[r])).collect();
    select_thresholds(&scores, &targets, mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Validation micro-F1 per level; empty without a validation split.
    pub val_level_f1: Vec<f64>,
}

/// Trains a linear model with the chosen head on `split.train`. The `hab`
/// head picks its thresholds on `split.val` after every epoch.
pub fn train_linear_classifier(
    h: &Hierarchy,
    features: &FeatureMatrix,
    split: &InstanceSplit,
    config: &ClassifierConfig,
) -> Result<(LinearClassifier, Vec<ClassifierEpochLog>)> {
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Inconsistent("batch size and learning rate must be positive".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Inconsistent("no training instances".into()));
    }
    let layout = HeadLayout::new(h);
    let paths = instance_paths(h, features)?;
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let width = config.kind.output_width(&layout);
    let mut clf = LinearClassifier::new(config.kind, features.dim(), width, config.init_std, &mut rng);
    let mut adam = Adam::new(clf.params.len(), config.lr);

    let train_leaf: Vec<usize> = split.train.iter().map(|&r| *paths[r].last().unwrap()).collect();
    let weights = match config.imbalance {
        ImbalancePolicy::None => None,
        _ => Some(ClassWeights::from_labels(&train_leaf)?),
    };
    let sampler = match (config.imbalance, &weights) {
        (ImbalancePolicy::Resample, Some(w)) => Some(
            WeightedIndex::new(w.sample_weights(&train_leaf)?)
                .map_err(|e| Error::Sampling(e.to_string()))?,
        ),
        _ => None,
    };

    let select_on_val = |clf: &LinearClassifier| -> Result<Option<Thresholds>> {
        if clf.kind != HeadKind::Hab || split.val.is_empty() {
            return Ok(None);
        }
        hab_thresholds(clf, &layout, features, &split.val, &paths, config.threshold_mode).map(Some)
    };

    let mut log = Vec::with_capacity(config.epochs);
    let mut order = split.train.clone();
    for epoch in 1..=config.epochs {
        match &sampler {
            Some(s) => {
                for o in order.iter_mut() {
                    *o = split.train[s.sample(&mut rng)];
                }
            }
            None => order.shuffle(&mut rng),
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let terms: Vec<(f64, f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&r| {
                    let (l, g) = head_loss(config.kind, &clf.logits(features.row(r)), &layout, &paths[r])?;
                    let w = match (config.imbalance, &weights) {
                        (ImbalancePolicy::ClassWeights, Some(cw)) => cw.get(*paths[r].last().unwrap())?,
                        _ => 1.0,
                    };
                    Ok((l, w, g))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads = vec![0.0; clf.params.len()];
            for (&r, (l, w, g)) in batch.iter().zip(&terms) {
                epoch_loss += w * l;
                clf.accumulate(features.row(r), g, w * scale, &mut grads);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::NonFinite(format!("classifier loss diverged at epoch {epoch}")));
            }
            adam.step(&mut clf.params, &grads)?;
        }
        clf.thresholds = select_on_val(&clf)?;
        let val_level_f1 = if split.val.is_empty() {
            Vec::new()
        } else {
            evaluate_classifier(&clf, &layout, features, &split.val, &paths)?.level_f1
        };
        log.push(ClassifierEpochLog {
            epoch,
            loss: epoch_loss / order.len() as f64,
            val_level_f1,
        });
    }
    if clf.kind == HeadKind::Hab {
        if split.val.is_empty() {
            return Err(Error::UndefinedMetric("threshold selection needs a non-empty validation set"));
        }
        clf.thresholds = select_on_val(&clf)?;
    }
    Ok((clf, log))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::hierarchy::{generate_synthetic_tree, Node};

    fn small() -> (Hierarchy, HeadLayout) {
        // two roots; root 0 has leaves 2, 3; root 1 has leaf 4
        let nodes = (0..5u32)
            .map(|id| Node {
                id,
                level: if id < 2 { 1 } else { 2 },
                name: format!("n{id}"),
            })
            .collect();
        let h = Hierarchy::new(nodes, &[(0, 2), (0, 3), (1, 4)]).unwrap();
        let l = HeadLayout::new(&h);
        (h, l)
    }

    #[test]
    fn hab_examples() {
        let (l, g) = hab_loss(&[0.0], &[true]).unwrap();
        assert_abs_diff_eq!(l, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0], -0.5);
        let (l, _) = hab_loss(&[800.0], &[true]).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = hab_loss(&[-800.0], &[true]).unwrap();
        assert_abs_diff_eq!(l, 800.0);
    }

    #[test]
    fn plc_examples() {
        let h = generate_synthetic_tree(2, 4).unwrap();
        let layout = HeadLayout::new(&h);
        let x = vec![0.0; 5];
        let (l, _) = plc_loss(&x, &layout, &[0, 2]).unwrap();
        assert_abs_diff_eq!(l, 4f64.ln(), epsilon = 1e-12);
        let mut x = vec![0.0; 5];
        x[2] = 800.0;
        let (l, _) = plc_loss(&x, &layout, &[0, 2]).unwrap();
        assert_eq!(l, 0.0);
        assert!(matches!(plc_loss(&x, &layout, &[0, 0]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn mc_probability_examples() {
        // leaves 2, 3 under root 0, leaf 4 under root 1
        let (_, layout) = small();
        let logits: Vec<f64> = [0.2f64, 0.3, 0.5].iter().map(|p| p.ln()).collect();
        let p = mc_probabilities(&logits, &layout).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);

        let star = generate_synthetic_tree(2, 3).unwrap();
        let sl = HeadLayout::new(&star);
        assert_abs_diff_eq!(mc_probabilities(&[0.4, -1.0, 2.0], &sl).unwrap()[0], 1.0, epsilon = 1e-12);

        let t = Hierarchy::new(
            (0..6u32)
                .map(|id| Node {
                    id,
                    level: if id < 2 { 1 } else { 2 },
                    name: String::new(),
                })
                .collect(),
            &[(0, 2), (0, 3), (1, 4), (1, 5)],
        )
        .unwrap();
        let p = mc_probabilities(&[0.0; 4], &HeadLayout::new(&t)).unwrap();
        assert_eq!(&p[..2], &[0.5, 0.5]);
    }

    #[test]
    fn mc_single_level_is_softmax_ce() {
        let flat = Hierarchy::new(
            (0..3u32)
                .map(|id| Node {
                    id,
                    level: 1,
                    name: String::new(),
                })
                .collect(),
            &[],
        )
        .unwrap();
        let layout = HeadLayout::new(&flat);
        let x = [0.3, -1.2, 0.8];
        let (a, ga) = mc_loss(&x, &layout, &[1]).unwrap();
        let (b, gb) = plc_loss(&x, &layout, &[1]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        for (u, v) in ga.iter().zip(&gb) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn mc_loss_vanishes_on_a_certain_leaf() {
        let (_, layout) = small();
        let (l, _) = mc_loss(&[800.0, 0.0, 0.0], &layout, &[0, 2]).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mplc_examples() {
        let (_, layout) = small();
        let x = [0.1, 0.5, 1.3, 1.3, -0.4];
        // root 1 has a single child: that level costs nothing
        let (l, g) = mplc_loss(&x, &layout, &[1, 4]).unwrap();
        assert_abs_diff_eq!(l, log_sum_exp(&x, 0..2) - x[1], epsilon = 1e-12);
        assert_eq!(g[4], 0.0);
        // two equal children → ln 2 at level 2
        let (l, _) = mplc_loss(&x, &layout, &[0, 2]).unwrap();
        let base = log_sum_exp(&x, 0..2) - x[0];
        assert_abs_diff_eq!(l - base, std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(mplc_loss(&x, &layout, &[0, 4]).is_err());
    }

    #[test]
    fn mplc_full_mask_equals_plc() {
        let h = generate_synthetic_tree(2, 4).unwrap();
        let layout = HeadLayout::new(&h);
        let x = [0.2, 1.0, -0.3, 0.7, 0.1];
        assert_eq!(mplc_loss(&x, &layout, &[0, 3]).unwrap(), plc_loss(&x, &layout, &[0, 3]).unwrap());
    }

    #[test]
    fn mplc_predict_rules() {
        let (_, layout) = small();
        // parent 0 wins; child 3 dominates inside it
        assert_eq!(mplc_predict(&[1.0, 0.0, 0.1, 0.9, 5.0], &layout).unwrap(), vec![0, 3]);
        // wrong parent forces the child into its subtree
        assert_eq!(mplc_predict(&[0.0, 1.0, 9.0, 9.0, -5.0], &layout).unwrap(), vec![1, 4]);
        // ties go to the lowest index
        assert_eq!(mplc_predict(&[0.0, 0.0, 2.0, 2.0, 0.0], &layout).unwrap(), vec![0, 2]);
    }

    #[test]
    fn hs_examples() {
        let h = generate_synthetic_tree(3, 2).unwrap();
        let layout = HeadLayout::new(&h);
        let p = hs_probabilities(&[0.0; 7], &layout).unwrap();
        for leaf in h.level_range(3) {
            assert_abs_diff_eq!(p.joint[leaf], 0.25, epsilon = 1e-15);
        }
        let chain = generate_synthetic_tree(3, 1).unwrap();
        let cl = HeadLayout::new(&chain);
        let p = hs_probabilities(&[0.3, -2.0, 5.0], &cl).unwrap();
        assert_eq!(p.conditional, vec![1.0; 3]);
        assert_eq!(p.joint[2], 1.0);
        let (l, g) = hs_loss(&[0.3, -2.0, 5.0], &cl, &[0, 1, 2]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hs_gradient_stays_on_path_groups() {
        let h = generate_synthetic_tree(3, 2).unwrap();
        let layout = HeadLayout::new(&h);
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.37).sin()).collect();
        let (l, g) = hs_loss(&x, &layout, &[0, 1, 3]).unwrap();
        let groups_on_path: Vec<usize> = [0, 1, 3].iter().map(|&t| layout.hs_group[t]).collect();
        for v in 0..7 {
            if !groups_on_path.contains(&layout.hs_group[v]) {
                assert_eq!(g[layout.hs_pos[v]], 0.0);
            }
        }
        let p = hs_probabilities(&x, &layout).unwrap();
        assert_abs_diff_eq!(l, -p.joint[3].ln(), epsilon = 1e-12);
    }

    #[test]
    fn imbalance_examples() {
        let labels: Vec<usize> = std::iter::repeat_n(0, 90).chain(std::iter::repeat_n(1, 10)).collect();
        let w = ClassWeights::from_labels(&labels).unwrap();
        assert_abs_diff_eq!(w.get(1).unwrap() / w.get(0).unwrap(), 9.0, epsilon = 1e-12);
        let mass0: f64 = w.get(0).unwrap() * 90.0;
        let mass1: f64 = w.get(1).unwrap() * 10.0;
        assert_abs_diff_eq!(mass0, mass1, epsilon = 1e-12);
        assert!(w.get(7).is_err());

        let uniform = ClassWeights::from_labels(&[0, 1, 2, 0, 1, 2]).unwrap();
        assert_eq!(uniform.sample_weights(&[0, 1, 2]).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn thresholds_on_separated_scores() {
        let scores = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let targets = vec![vec![true, false], vec![false, true]];
        let t = select_thresholds(&scores, &targets, ThresholdMode::Ofadb).unwrap();
        let Thresholds::Single(v) = t else { panic!() };
        assert!(v > 0.2 && v <= 0.8);
        let t = select_thresholds(&scores, &targets, ThresholdMode::Pcdb).unwrap();
        assert!(matches!(t, Thresholds::PerLabel(ref v) if v.len() == 2));
        assert!(select_thresholds(&[], &[], ThresholdMode::Ofadb).is_err());
    }

    #[test]
    fn count_stats_example() {
        let s = count_stats(&[vec![true, true, false], vec![false, false, false], vec![true, true, true]]).unwrap();
        assert_eq!((s.min, s.max), (0, 3));
        assert_abs_diff_eq!(s.mean, 5.0 / 3.0);
    }

    /// Sum of leaf probabilities over the leaves whose path contains `node`.
    fn brute_leaf_prob(leaf_logits: &[f64], node: usize, h: &Hierarchy) -> f64 {
        let soft = softmax(leaf_logits);
        let last = h.level_range(h.n_levels());
        last.clone().filter(|&l| h.path(l).contains(&node)).map(|l| soft[l - last.start]).sum()
    }

    proptest! {
        #[test]
        fn probabilities_normalize(seed in 0u64..500) {
            let h = generate_synthetic_tree(3, 3).unwrap();
            let layout = HeadLayout::new(&h);
            let mut rng = SeededRng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 3.0).unwrap();
            let x: Vec<f64> = (0..13).map(|_| normal.sample(&mut rng)).collect();
            let leaves: Vec<f64> = (0..9).map(|_| normal.sample(&mut rng)).collect();

            let mc = mc_probabilities(&leaves, &layout).unwrap();
            let hs = hs_probabilities(&x, &layout).unwrap();
            for lv in 1..=3 {
                let r = h.level_range(lv);
                prop_assert!((mc[r.clone()].iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!((hs.joint[r].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            for g in layout.groups() {
                let s: f64 = g.iter().map(|&v| hs.conditional[v]).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            for v in 0..13 {
                prop_assert!((mc[v] - brute_leaf_prob(&leaves, v, &h)).abs() < 1e-12);
                let prod: f64 = h.path(v).iter().map(|&a| hs.conditional[a]).product();
                prop_assert!((hs.joint[v] - prod).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_ignores_segment_shifts(seed in 0u64..300, shift in -50.0f64..50.0) {
            let h = generate_synthetic_tree(3, 2).unwrap();
            let layout = HeadLayout::new(&h);
            let mut rng = SeededRng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let x: Vec<f64> = (0..7).map(|_| normal.sample(&mut rng)).collect();
            let mut y = x.clone();
            for v in h.level_range(2) {
                y[v] += shift;
            }
            prop_assert_eq!(plc_predict(&x, &layout).unwrap(), plc_predict(&y, &layout).unwrap());
            let mut z = x.clone();
            let g = &layout.groups()[1];
            for &v in g {
                z[layout.group_position(v)] += shift;
            }
            prop_assert_eq!(hs_predict(&x, &layout).unwrap(), hs_predict(&z, &layout).unwrap());
            let leaves: Vec<f64> = x[3..7].to_vec();
            let shifted: Vec<f64> = leaves.iter().map(|v| v + shift).collect();
            prop_assert_eq!(mc_predict(&leaves, &layout).unwrap(), mc_predict(&shifted, &layout).unwrap());
        }
    }
}
