//! Label-only embedding training with the max-margin order-violation loss,
//! and threshold-based hypernym edge prediction.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineSpec};
use crate::error::{Error, Result};
use crate::geometry::{self, ConeParams, Geometry, DOMAIN_MARGIN};
use crate::hierarchy::{Edge, EdgeSet, Hierarchy, SplitResult};
use crate::metrics::{self, ConfusionCounts, ThresholdSweep};
use crate::optim::OptimizerKind;
use crate::SeededRng;

/// One point per node, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub geometry: Geometry,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(geometry: Geometry, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding coordinate {v}")));
        }
        Ok(Self { geometry, dim, data })
    }

    /// Random initialization: uniform direction, norm uniform in
    /// `[ε + δ, 0.9 · domain max]` (domain max taken as 1 for order
    /// embeddings).
    pub fn random<R: Rng + ?Sized>(n: usize, dim: usize, params: &ConeParams, rng: &mut R) -> Self {
        let lo = params.epsilon() + DOMAIN_MARGIN;
        let max = params.domain_max();
        let hi = 0.9 * if max.is_finite() { max } else { 1.0 };
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let len = geometry::norm(&dir).max(geometry::DENOM_EPS);
            let r = lo + (hi - lo) * rng.random::<f64>();
            data.extend(dir.iter().map(|c| c * r / len));
        }
        Self {
            geometry: params.geometry,
            dim,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn energy(&self, params: &ConeParams, (u, v): Edge) -> Result<f64> {
        params.energy(self.row(u), self.row(v))
    }
}

/// How training negatives are drawn for each positive edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativePolicy {
    /// `rounds` corruptions per level on each side.
    PickPerLevel { rounds: usize },
    /// `per_side` uniform corruptions on each side.
    Uniform { per_side: usize },
}

impl Default for NegativePolicy {
    fn default() -> Self {
        NegativePolicy::PickPerLevel { rounds: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub geometry: Geometry,
    pub dim: usize,
    pub k: f64,
    #[serde(default)]
    pub squared: bool,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: NegativePolicy,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults: α = 1, lr = 0.01, 500 epochs, batch 10; RSGD for hyperbolic
    /// cones and Adam otherwise.
    pub fn new(geometry: Geometry, dim: usize) -> Self {
        Self {
            geometry,
            dim,
            k: geometry::DEFAULT_K,
            squared: false,
            margin: 1.0,
            lr: 0.01,
            epochs: 500,
            batch_size: 10,
            negatives: NegativePolicy::default(),
            optimizer: if geometry.is_hyperbolic() {
                OptimizerKind::Rsgd
            } else {
                OptimizerKind::Adam
            },
            seed: 0,
        }
    }

    pub fn cone_params(&self) -> Result<ConeParams> {
        let mut p = ConeParams::new(self.geometry, self.k)?;
        p.squared = self.squared;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !(self.lr > 0.0) {
            return Err(Error::Inconsistent("margin and learning rate must be positive".into()));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Inconsistent("dimension and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value with per-row gradients for the whole table.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// `Σ_pos E(u, v) + Σ_neg max(0, α − E(u', v'))` with gradients accumulated
/// per endpoint. Pairs at a singular configuration contribute nothing.
pub fn max_margin_loss(
    positives: &[Edge],
    negatives: &[Edge],
    emb: &EmbeddingTable,
    params: &ConeParams,
    margin: f64,
) -> Result<LossGrad> {
    let dim = emb.dim();
    let mut grads = vec![0.0; emb.as_slice().len()];
    let mut loss = 0.0;
    let pairs = positives
        .iter()
        .map(|e| (*e, true))
        .chain(negatives.iter().map(|e| (*e, false)));
    for ((u, v), positive) in pairs {
        let Some((value, scale, g)) =
            engine::pair_term(emb.row(u), emb.row(v), positive, params, margin)?
        else {
            continue;
        };
        loss += value;
        for i in 0..dim {
            grads[u * dim + i] += scale * g.dx[i];
            grads[v * dim + i] += scale * g.dy[i];
        }
    }
    Ok(LossGrad { loss, grads })
}

/// Result of edge classification by an energy threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEval {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
}

impl EdgeEval {
    fn from_counts(threshold: f64, c: &ConfusionCounts) -> Self {
        let (precision, recall, f1) = metrics::precision_recall_f1(c);
        let (tpr, tnr) = metrics::tpr_tnr(c);
        Self {
            threshold,
            precision,
            recall,
            f1,
            accuracy: c.accuracy(),
            tpr,
            tnr,
        }
    }
}

fn edge_energies(emb: &EmbeddingTable, params: &ConeParams, edges: &[Edge]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    edges
        .par_iter()
        .map(|&e| match emb.energy(params, e) {
            // coincident points violate nothing
            Err(Error::Singularity(_)) => Ok(0.0),
            other => other,
        })
        .collect()
}

/// Picks the energy threshold with the best F1 on the given sets; an edge is
/// predicted present when `E ≤ threshold`.
pub fn evaluate_edge_prediction(
    emb: &EmbeddingTable,
    params: &ConeParams,
    positives: &[Edge],
    negatives: &[Edge],
) -> Result<EdgeEval> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::UndefinedMetric("edge prediction needs positives and negatives"));
    }
    let pos = edge_energies(emb, params, positives)?;
    let neg = edge_energies(emb, params, negatives)?;
    let sweep = ThresholdSweep::lower_is_positive(&pos, &neg);
    Ok(EdgeEval::from_counts(sweep.threshold, &sweep.counts))
}

/// Classifies edges with a fixed threshold.
pub fn evaluate_at_threshold(
    emb: &EmbeddingTable,
    params: &ConeParams,
    positives: &[Edge],
    negatives: &[Edge],
    threshold: f64,
) -> Result<EdgeEval> {
    let mut c = ConfusionCounts::default();
    for e in edge_energies(emb, params, positives)? {
        c.record(e <= threshold, true);
    }
    for e in edge_energies(emb, params, negatives)? {
        c.record(e <= threshold, false);
    }
    Ok(EdgeEval::from_counts(threshold, &c))
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: EmbeddingTable,
    pub log: Vec<EpochLog>,
}

/// Seeded initial table for `n` nodes.
pub fn initial_table(n: usize, config: &TrainConfig) -> Result<EmbeddingTable> {
    let params = config.cone_params()?;
    let mut rng = SeededRng::seed_from_u64(config.seed);
    Ok(EmbeddingTable::random(n, config.dim, &params, &mut rng))
}

/// Trains label embeddings on `split.train`. Negatives never coincide with a
/// closure edge. Validation F1 is logged after every epoch when the split has
/// validation positives and negatives.
pub fn train_label_embeddings(
    h: &Hierarchy,
    split: &SplitResult,
    closure: &EdgeSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let init = initial_table(h.len(), config)?;
    train_label_embeddings_from(h, split, closure, config, init)
}

pub fn train_label_embeddings_from(
    h: &Hierarchy,
    split: &SplitResult,
    closure: &EdgeSet,
    config: &TrainConfig,
    mut table: EmbeddingTable,
) -> Result<TrainOutcome> {
    config.validate()?;
    if table.len() != h.len() || table.dim() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: h.len() * config.dim,
            got: table.as_slice().len(),
        });
    }
    let params = config.cone_params()?;
    let val_neg = split.val_negative_edges();
    let spec = EngineSpec {
        params,
        margin: config.margin,
        epochs: config.epochs,
        batch_size: config.batch_size,
        negatives: config.negatives,
        balance_negatives: false,
        seed: config.seed,
        label_levels: h.level_ranges().to_vec(),
        label_closure: closure,
        positives: split.train.pairs().to_vec(),
        label_optimizer: config.optimizer,
        label_lr: config.lr,
        instances: None,
    };
    let mut log = Vec::with_capacity(config.epochs);
    engine::train(spec, &mut table, &mut |epoch, loss, table, _| {
        let (val_f1, threshold) = if !split.val.is_empty() && !val_neg.is_empty() {
            let ev = evaluate_edge_prediction(table, &params, split.val.pairs(), &val_neg)?;
            (Some(ev.f1), Some(ev.threshold))
        } else {
            (None, None)
        };
        log.push(EpochLog {
            epoch,
            loss,
            val_f1,
            threshold,
        });
        Ok(())
    })?;
    Ok(TrainOutcome { table, log })
}

/// Trains once per margin and keeps the run with the best final validation
/// F1 (first wins on ties).
pub fn sweep_margin(
    h: &Hierarchy,
    split: &SplitResult,
    closure: &EdgeSet,
    config: &TrainConfig,
    margins: &[f64],
) -> Result<(f64, TrainOutcome)> {
    let mut best: Option<(f64, f64, TrainOutcome)> = None;
    for &margin in margins {
        let cfg = TrainConfig {
            margin,
            ..config.clone()
        };
        let out = train_label_embeddings(h, split, closure, &cfg)?;
        let f1 = out.log.last().and_then(|l| l.val_f1).unwrap_or(0.0);
        if best.as_ref().map_or(true, |b| f1 > b.1) {
            best = Some((margin, f1, out));
        }
    }
    best.map(|(m, _, o)| (m, o))
        .ok_or_else(|| Error::Inconsistent("margin sweep needs at least one margin".into()))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::hierarchy::{augment_eval_negatives, generate_synthetic_tree, split_edges};

    fn oe() -> ConeParams {
        ConeParams::new(Geometry::Oe, 0.1).unwrap()
    }

    #[test]
    fn margin_loss_examples() {
        // positive satisfied, negative beyond the margin
        let t = EmbeddingTable::from_rows(Geometry::Oe, 1, vec![0.0, 1.0, -2.0]).unwrap();
        let lg = max_margin_loss(&[(0, 1)], &[(0, 2)], &t, &oe(), 1.0).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grads.iter().all(|g| *g == 0.0));

        // positive energy 0.3, negative energy 0.2, α = 1 → 0.3 + 0.8
        let t = EmbeddingTable::from_rows(Geometry::Oe, 1, vec![0.3, 0.0, 0.2, 0.0]).unwrap();
        let lg = max_margin_loss(&[(0, 1)], &[(2, 3)], &t, &oe(), 1.0).unwrap();
        assert_abs_diff_eq!(lg.loss, 1.1, epsilon = 1e-12);
        assert_eq!(lg.grads, vec![1.0, -1.0, -1.0, 1.0]);
    }

    #[test]
    fn empty_positive_set_contributes_nothing() {
        let t = EmbeddingTable::from_rows(Geometry::Oe, 1, vec![0.3, 0.0]).unwrap();
        let lg = max_margin_loss(&[], &[(0, 1)], &t, &oe(), 1.0).unwrap();
        assert_abs_diff_eq!(lg.loss, 0.7, epsilon = 1e-12);
    }

    fn table_with_energies(pos: &[f64], neg: &[f64]) -> (EmbeddingTable, Vec<Edge>, Vec<Edge>) {
        // 1-D OE: E(0, x) = max(0, -x) with node 0 at the origin
        let mut rows = vec![0.0];
        let mut p = Vec::new();
        let mut n = Vec::new();
        for &e in pos {
            p.push((0, rows.len()));
            rows.push(-e);
        }
        for &e in neg {
            n.push((0, rows.len()));
            rows.push(-e);
        }
        (EmbeddingTable::from_rows(Geometry::Oe, 1, rows).unwrap(), p, n)
    }

    #[test]
    fn edge_prediction_examples() {
        let (t, p, n) = table_with_energies(&[0.0, 0.0, 0.0], &[1.0, 1.0]);
        let ev = evaluate_edge_prediction(&t, &oe(), &p, &n).unwrap();
        assert_eq!(ev.f1, 1.0);
        assert!(ev.threshold > 0.0 && ev.threshold < 1.0);

        let (t, p, n) = table_with_energies(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        let ev = evaluate_edge_prediction(&t, &oe(), &p, &n).unwrap();
        assert_eq!(ev.recall, 1.0);
        assert_abs_diff_eq!(ev.precision, 0.4);
        assert_abs_diff_eq!(ev.f1, 2.0 * 0.4 / 1.4);

        assert!(evaluate_edge_prediction(&t, &oe(), &[], &n).is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let h = generate_synthetic_tree(3, 2).unwrap();
        let closure = h.transitive_closure().unwrap();
        let split = split_edges(&h, 0.0, 0).unwrap();
        let mut cfg = TrainConfig::new(Geometry::Ec, 2);
        cfg.epochs = 0;
        let out = train_label_embeddings(&h, &split, &closure, &cfg).unwrap();
        assert_eq!(out.table, initial_table(h.len(), &cfg).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_stays_in_domain() {
        let h = generate_synthetic_tree(3, 3).unwrap();
        let closure = h.transitive_closure().unwrap();
        let split = split_edges(&h, 0.5, 1).unwrap();
        let split = augment_eval_negatives(split, &closure, h.len(), 1).unwrap();
        for g in [Geometry::Ec, Geometry::Hc] {
            let mut cfg = TrainConfig::new(g, 3);
            cfg.epochs = 20;
            let a = train_label_embeddings(&h, &split, &closure, &cfg).unwrap();
            let b = train_label_embeddings(&h, &split, &closure, &cfg).unwrap();
            assert_eq!(a.table, b.table);
            let p = cfg.cone_params().unwrap();
            for i in 0..h.len() {
                let r = geometry::norm(a.table.row(i));
                assert!(r >= p.epsilon() && r < p.domain_max(), "{g}: norm {r}");
            }
            assert_eq!(a.log.len(), 20);
            assert!(a.log.iter().all(|l| l.val_f1.is_some()));
        }
    }

    #[test]
    fn training_reduces_loss() {
        let h = generate_synthetic_tree(3, 3).unwrap();
        let closure = h.transitive_closure().unwrap();
        let split = split_edges(&h, 0.0, 1).unwrap();
        let mut cfg = TrainConfig::new(Geometry::Oe, 2);
        cfg.epochs = 200;
        let out = train_label_embeddings(&h, &split, &closure, &cfg).unwrap();
        let first = out.log[0].loss;
        let last = out.log.last().unwrap().loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
    }
}
