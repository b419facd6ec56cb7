//! Joint embedding of instance feature vectors with the label hierarchy.
//!
//! Instances are mapped into the label space by a single bias-free linear
//! layer (followed by `exp_0` in the Poincaré ball) and become extra leaves:
//! every ancestor label of an instance's leaf is a positive parent of it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{self, EdgeEval, EmbeddingTable, NegativePolicy};
use crate::engine::{self, EngineSpec, InstanceSpace};
use crate::error::{Error, Result};
use crate::geometry::{self, ConeParams, Geometry};
use crate::hierarchy::{Edge, EdgeSet, Hierarchy};
use crate::metrics::{self, ConfusionCounts};
use crate::optim::OptimizerKind;
use crate::SeededRng;

/// Dense feature rows with instance ids and leaf labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    pub ids: Vec<u32>,
    /// Node id of each instance's leaf label.
    pub leaf: Vec<u32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>, ids: Vec<u32>, leaf: Vec<u32>) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim || leaf.len() != ids.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {v}")));
        }
        Ok(Self { dim, data, ids, leaf })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Leaf node index of every instance.
    pub fn leaf_indices(&self, h: &Hierarchy) -> Result<Vec<usize>> {
        self.leaf
            .iter()
            .map(|&id| {
                h.index_of(id)
                    .ok_or_else(|| Error::Inconsistent(format!("instance label {id} is not in the hierarchy")))
            })
            .collect()
    }
}

/// `W`: a `D × N` matrix mapping features to `N`-dimensional points, stored
/// row-major (one row per input feature).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub geometry: Geometry,
    input: usize,
    output: usize,
    w: Vec<f64>,
}

impl LinearMap {
    pub fn from_weights(geometry: Geometry, input: usize, output: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != input * output || input == 0 || output == 0 {
            return Err(Error::DimensionMismatch {
                expected: input * output,
                got: w.len(),
            });
        }
        if let Some(v) = w.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("map weight {v}")));
        }
        Ok(Self {
            geometry,
            input,
            output,
            w,
        })
    }

    pub fn zeros(geometry: Geometry, input: usize, output: usize) -> Self {
        Self {
            geometry,
            input,
            output,
            w: vec![0.0; input * output],
        }
    }

    /// Gaussian entries with standard deviation `std`.
    pub fn random<R: rand::Rng + ?Sized>(
        geometry: Geometry,
        input: usize,
        output: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let w = (0..input * output).map(|_| normal.sample(rng)).collect();
        Self {
            geometry,
            input,
            output,
            w,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    /// `Wᵀ row`, before any exponential map.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output];
        for (x, wrow) in row.iter().zip(self.w.chunks(self.output)) {
            if *x == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(wrow) {
                *o += x * w;
            }
        }
        out
    }

    pub(crate) fn embed_from_pre(&self, pre: &[f64]) -> Vec<f64> {
        if self.geometry.is_hyperbolic() {
            geometry::exp_map_zero(pre)
        } else {
            pre.to_vec()
        }
    }

    /// Gradient with respect to the pre-activation, given one at the point.
    pub(crate) fn pull_back(&self, pre: &[f64], grad: &[f64]) -> Vec<f64> {
        if self.geometry.is_hyperbolic() {
            geometry::exp_map_zero_vjp(pre, grad)
        } else {
            grad.to_vec()
        }
    }

    pub(crate) fn accumulate_grad(&self, row: &[f64], gz: &[f64], out: &mut [f64]) {
        for (x, orow) in row.iter().zip(out.chunks_mut(self.output)) {
            for (o, g) in orow.iter_mut().zip(gz) {
                *o += x * g;
            }
        }
    }
}

/// Point of one feature row in the label space.
pub fn embed_instance(row: &[f64], map: &LinearMap) -> Result<Vec<f64>> {
    if row.len() != map.input {
        return Err(Error::DimensionMismatch {
            expected: map.input,
            got: row.len(),
        });
    }
    let p = map.embed_from_pre(&map.apply(row));
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("instance embedding".into()));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub geometry: Geometry,
    pub dim: usize,
    pub k: f64,
    pub margin: f64,
    pub lr_labels: f64,
    pub lr_im: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: NegativePolicy,
    /// Half of the corrupted children are instances.
    #[serde(default)]
    pub balance_negatives: bool,
    /// Standard deviation of the initial map weights.
    pub init_std: f64,
    pub seed: u64,
}

impl JointConfig {
    /// EC: 200 epochs with label lr 1e-2; HC: 100 epochs with label lr 1e-4;
    /// map lr 1e-3, α = 1, Adam for both parameter groups.
    pub fn new(geometry: Geometry, dim: usize) -> Self {
        let (epochs, lr_labels) = if geometry.is_hyperbolic() {
            (100, 1e-4)
        } else {
            (200, 1e-2)
        };
        Self {
            geometry,
            dim,
            k: geometry::DEFAULT_K,
            margin: 1.0,
            lr_labels,
            lr_im: 1e-3,
            epochs,
            batch_size: 10,
            negatives: NegativePolicy::default(),
            balance_negatives: false,
            init_std: 0.01,
            seed: 0,
        }
    }

    pub fn cone_params(&self) -> Result<ConeParams> {
        ConeParams::new(self.geometry, self.k)
    }

    fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.lr_labels > 0.0 && self.lr_im > 0.0 && self.init_std >= 0.0) {
            return Err(Error::Inconsistent("margin and learning rates must be positive".into()));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Inconsistent("dimension and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub labels: EmbeddingTable,
    pub map: LinearMap,
    pub params: ConeParams,
    pub margin: f64,
}

impl JointModel {
    pub fn embed(&self, row: &[f64]) -> Result<Vec<f64>> {
        embed_instance(row, &self.map)
    }
}

/// Instance indices split 80/10/10 into train, validation and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_instances(n: usize, seed: u64) -> InstanceSplit {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SeededRng::seed_from_u64(seed));
    let n_eval = (0.1 * n as f64).round() as usize;
    let test = idx.split_off(n - n_eval);
    let val = idx.split_off(n - 2 * n_eval);
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    InstanceSplit {
        train: sorted(idx),
        val: sorted(val),
        test: sorted(test),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEpochLog {
    pub epoch: usize,
    pub loss: f64,
}

/// Trains labels and the map on the closure of the hierarchy extended with
/// the instances in `train_rows`. Label points start from `init` when given
/// (typically a label-only model), otherwise from a seeded random table.
pub fn train_joint(
    h: &Hierarchy,
    closure: &EdgeSet,
    features: &FeatureMatrix,
    train_rows: &[usize],
    config: &JointConfig,
    init: Option<EmbeddingTable>,
) -> Result<(JointModel, Vec<JointEpochLog>)> {
    config.validate()?;
    let params = config.cone_params()?;
    let n_labels = h.len();
    let mut rng = SeededRng::seed_from_u64(config.seed);
    let mut labels = match init {
        Some(t) => {
            if t.len() != n_labels || t.dim() != config.dim || t.geometry != config.geometry {
                return Err(Error::Inconsistent(
                    "initial label table does not match the hierarchy or configuration".into(),
                ));
            }
            t
        }
        None => EmbeddingTable::random(n_labels, config.dim, &params, &mut rng),
    };
    let mut map = LinearMap::random(config.geometry, features.dim(), config.dim, config.init_std, &mut rng);

    let leaves = features.leaf_indices(h)?;
    let mut positives: Vec<Edge> = closure.pairs().to_vec();
    let mut ancestors = Vec::with_capacity(train_rows.len());
    for (j, &row) in train_rows.iter().enumerate() {
        let leaf = *leaves
            .get(row)
            .ok_or_else(|| Error::Inconsistent(format!("instance row {row} out of range")))?;
        let mut anc = h.path(leaf);
        anc.sort_unstable();
        positives.extend(anc.iter().map(|&a| (a, n_labels + j)));
        ancestors.push(anc);
    }

    let instances = (!train_rows.is_empty()).then(|| InstanceSpace {
        features,
        rows: train_rows.to_vec(),
        ancestors,
        map: &mut map,
        lr: config.lr_im,
    });
    let spec = EngineSpec {
        params,
        margin: config.margin,
        epochs: config.epochs,
        batch_size: config.batch_size,
        negatives: config.negatives,
        balance_negatives: config.balance_negatives,
        seed: config.seed,
        label_levels: h.level_ranges().to_vec(),
        label_closure: closure,
        positives,
        label_optimizer: OptimizerKind::Adam,
        label_lr: config.lr_labels,
        instances,
    };
    let mut log = Vec::with_capacity(config.epochs);
    engine::train(spec, &mut labels, &mut |epoch, loss, _, _| {
        log.push(JointEpochLog { epoch, loss });
        Ok(())
    })?;
    Ok((
        JointModel {
            labels,
            map,
            params,
            margin: config.margin,
        },
        log,
    ))
}

fn energy_or_zero(params: &ConeParams, x: &[f64], y: &[f64]) -> Result<f64> {
    match params.energy(x, y) {
        Err(Error::Singularity(_)) => Ok(0.0),
        other => other,
    }
}

/// Energies of every label on `level` (1-based) against an instance point.
pub fn level_energies(model: &JointModel, h: &Hierarchy, point: &[f64], level: usize) -> Result<Vec<f64>> {
    h.level_range(level)
        .map(|l| energy_or_zero(&model.params, model.labels.row(l), point))
        .collect()
}

/// Label index on `level` with the least energy against the instance, and
/// that energy. Ties go to the lowest node id.
pub fn classify_instance(model: &JointModel, h: &Hierarchy, row: &[f64], level: usize) -> Result<(usize, f64)> {
    if level == 0 || level > h.n_levels() {
        return Err(Error::Inconsistent(format!("level {level} outside 1..={}", h.n_levels())));
    }
    let point = model.embed(row)?;
    let energies = level_energies(model, h, &point, level)?;
    let best = metrics::rank_ascending(&energies)[0];
    Ok((h.level_range(level).start + best, energies[best]))
}

/// One prediction row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub instance: usize,
    pub level: usize,
    pub label: usize,
    pub energy: f64,
}

/// Per-instance, per-level energy rankings (label indices within each level,
/// best first).
pub fn rank_instances(model: &JointModel, h: &Hierarchy, features: &FeatureMatrix, rows: &[usize]) -> Result<Vec<Vec<(Vec<usize>, Vec<f64>)>>> {
    rows.par_iter()
        .map(|&r| {
            let point = model.embed(features.row(r))?;
            (1..=h.n_levels())
                .map(|level| {
                    let e = level_energies(model, h, &point, level)?;
                    Ok((metrics::rank_ascending(&e), e))
                })
                .collect()
        })
        .collect()
}

/// One prediction per level for each listed instance, instance-major.
pub fn classify_all(model: &JointModel, h: &Hierarchy, features: &FeatureMatrix, rows: &[usize]) -> Result<Vec<Prediction>> {
    let ranks = rank_instances(model, h, features, rows)?;
    let mut out = Vec::with_capacity(rows.len() * h.n_levels());
    for (&instance, per_level) in rows.iter().zip(&ranks) {
        for (l, (order, e)) in per_level.iter().enumerate() {
            let level = l + 1;
            out.push(Prediction {
                instance,
                level,
                label: h.level_range(level).start + order[0],
                energy: e[order[0]],
            });
        }
    }
    Ok(out)
}

/// Classification quality of a joint model on a set of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEval {
    /// Per-level accuracy (equal to per-level micro-F1).
    pub level_accuracy: Vec<f64>,
    /// Micro-F1 pooled over every level's decisions.
    pub m_f1: f64,
    pub hit3_last: f64,
    pub hit5_last: f64,
    pub hit3_mean: f64,
    pub hit5_mean: f64,
}

pub fn evaluate_joint(model: &JointModel, h: &Hierarchy, features: &FeatureMatrix, rows: &[usize]) -> Result<JointEval> {
    if rows.is_empty() {
        return Err(Error::UndefinedMetric("no instances to evaluate"));
    }
    let leaves = features.leaf_indices(h)?;
    let ranks = rank_instances(model, h, features, rows)?;
    let n_levels = h.n_levels();
    let mut pooled = ConfusionCounts::default();
    let mut level_accuracy = Vec::with_capacity(n_levels);
    let mut hit3 = Vec::with_capacity(n_levels);
    let mut hit5 = Vec::with_capacity(n_levels);
    for level in 1..=n_levels {
        let start = h.level_range(level).start;
        let truth: Vec<usize> = rows
            .iter()
            .map(|&r| {
                let path = h.path(leaves[r]);
                path.get(level - 1).map_or(usize::MAX, |t| t - start)
            })
            .collect();
        let rankings: Vec<Vec<usize>> = ranks.iter().map(|pl| pl[level - 1].0.clone()).collect();
        let pred: Vec<usize> = rankings.iter().map(|r| r[0]).collect();
        let width = h.level_range(level).len();
        let counts = metrics::single_label_counts(&pred, &truth, width);
        let total: ConfusionCounts = counts.iter().copied().sum();
        pooled = pooled + total;
        level_accuracy.push(metrics::Metric::F1.of(&total));
        hit3.push(metrics::hit_at_k(&rankings, &truth, 3)?);
        hit5.push(metrics::hit_at_k(&rankings, &truth, 5)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(JointEval {
        m_f1: metrics::Metric::F1.of(&pooled),
        hit3_last: *hit3.last().unwrap(),
        hit5_last: *hit5.last().unwrap(),
        hit3_mean: mean(&hit3),
        hit5_mean: mean(&hit5),
        level_accuracy,
    })
}

/// Label-hierarchy reconstruction: closure pairs against every other ordered
/// label pair, at the best-F1 energy threshold. Instances play no part.
pub fn reconstruct_labels(labels: &EmbeddingTable, params: &ConeParams, closure: &EdgeSet) -> Result<EdgeEval> {
    let n = labels.len();
    let negatives: Vec<Edge> = (0..n)
        .flat_map(|u| (0..n).map(move |v| (u, v)))
        .filter(|&(u, v)| u != v && !closure.contains((u, v)))
        .collect();
    embed::evaluate_edge_prediction(labels, params, closure.pairs(), &negatives)
}
