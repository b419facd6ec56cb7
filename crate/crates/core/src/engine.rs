//! Shared mini-batch loop for label-only and joint training.
//!
//! Node indices `0..n_labels` address label rows; `n_labels + j` addresses
//! the `j`-th training instance, whose point is computed through the linear
//! map. Instances only ever appear as children.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::embed::{EmbeddingTable, NegativePolicy};
use crate::error::{Error, Result};
use crate::geometry::{self, ConeParams, EnergyGrad};
use crate::hierarchy::{pick_per_level, Edge, EdgeSet, Side};
use crate::joint::{FeatureMatrix, LinearMap};
use crate::optim::{Adam, OptimizerKind, OptimizerState};
use crate::SeededRng;

/// RNG stream used by the training loop; stream 0 seeds initialization.
const TRAIN_STREAM: u64 = 1;

pub(crate) struct InstanceSpace<'a> {
    pub features: &'a FeatureMatrix,
    /// Feature row of each training instance.
    pub rows: Vec<usize>,
    /// Sorted label ancestors (leaf included) of each training instance.
    pub ancestors: Vec<Vec<usize>>,
    pub map: &'a mut LinearMap,
    pub lr: f64,
}

pub(crate) struct EngineSpec<'a> {
    pub params: ConeParams,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: NegativePolicy,
    /// Corrupted children are instances half of the time.
    pub balance_negatives: bool,
    pub seed: u64,
    pub label_levels: Vec<Range<usize>>,
    pub label_closure: &'a EdgeSet,
    pub positives: Vec<Edge>,
    pub label_optimizer: OptimizerKind,
    pub label_lr: f64,
    pub instances: Option<InstanceSpace<'a>>,
}

/// Loss contribution of one pair: `(value, gradient sign, gradients)`, or
/// `None` when the pair is inactive or singular.
pub(crate) fn pair_term(
    x: &[f64],
    y: &[f64],
    positive: bool,
    params: &ConeParams,
    margin: f64,
) -> Result<Option<(f64, f64, EnergyGrad)>> {
    let g = match geometry::energy_gradients(x, y, params) {
        Ok(g) => g,
        Err(Error::Singularity(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if positive {
        if g.value == 0.0 {
            return Ok(None);
        }
        Ok(Some((g.value, 1.0, g)))
    } else {
        let h = margin - g.value;
        if h <= 0.0 {
            return Ok(None);
        }
        Ok(Some((h, -1.0, g)))
    }
}

struct CachedInstance {
    pre: Vec<f64>,
    point: Vec<f64>,
    grad: Vec<f64>,
}

fn sample_negatives<R: Rng + ?Sized>(
    spec: &EngineSpec<'_>,
    edge: Edge,
    child_levels: &[Range<usize>],
    is_positive: &dyn Fn(Edge) -> bool,
    rng: &mut R,
    out: &mut Vec<Edge>,
) {
    let n_labels = spec.label_levels.last().map_or(0, |r| r.end);
    match spec.negatives {
        NegativePolicy::PickPerLevel { rounds } => {
            for _ in 0..rounds {
                out.extend(pick_per_level(edge, Side::CorruptParent, &spec.label_levels, is_positive, rng));
                if spec.balance_negatives && child_levels.len() > spec.label_levels.len() {
                    let inst = child_levels.last().unwrap().clone();
                    for _ in 0..spec.label_levels.len() {
                        let pool = if rng.random::<bool>() { inst.clone() } else { 0..n_labels };
                        out.extend(pick_per_level(edge, Side::CorruptChild, &[pool], is_positive, rng));
                    }
                } else {
                    out.extend(pick_per_level(edge, Side::CorruptChild, child_levels, is_positive, rng));
                }
            }
        }
        NegativePolicy::Uniform { per_side } => {
            let all_children = 0..child_levels.last().map_or(0, |r| r.end);
            for _ in 0..per_side {
                out.extend(pick_per_level(edge, Side::CorruptParent, &[0..n_labels], is_positive, rng));
                out.extend(pick_per_level(edge, Side::CorruptChild, &[all_children.clone()], is_positive, rng));
            }
        }
    }
}

/// Runs `spec.epochs` epochs, calling `on_epoch(epoch, loss, table, map)`
/// after each one. Returns nothing; the table and map are updated in place.
pub(crate) fn train(
    mut spec: EngineSpec<'_>,
    labels: &mut EmbeddingTable,
    on_epoch: &mut dyn FnMut(usize, f64, &EmbeddingTable, Option<&LinearMap>) -> Result<()>,
) -> Result<()> {
    let dim = labels.dim();
    let n_labels = labels.len();
    let mut rng = SeededRng::seed_from_u64(spec.seed);
    rng.set_stream(TRAIN_STREAM);

    let mut label_opt = OptimizerState::new(spec.label_optimizer, n_labels * dim, spec.label_lr);
    let mut map_opt = spec
        .instances
        .as_ref()
        .map(|inst| Adam::new(inst.map.weights().len(), inst.lr));

    let mut child_levels = spec.label_levels.clone();
    if let Some(inst) = &spec.instances {
        child_levels.push(n_labels..n_labels + inst.rows.len());
    }

    let mut positives = std::mem::take(&mut spec.positives);
    let mut negatives = Vec::new();
    let mut label_grads = vec![0.0; n_labels * dim];

    for epoch in 1..=spec.epochs {
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in positives.chunks(spec.batch_size) {
            negatives.clear();
            {
                let closure = spec.label_closure;
                let ancestors = spec.instances.as_ref().map(|i| &i.ancestors);
                let is_positive = |(u, v): Edge| {
                    if v < n_labels {
                        closure.contains((u, v))
                    } else {
                        ancestors.is_some_and(|a| a[v - n_labels].binary_search(&u).is_ok())
                    }
                };
                for &edge in batch {
                    sample_negatives(&spec, edge, &child_levels, &is_positive, &mut rng, &mut negatives);
                }
            }

            let mut cache: BTreeMap<usize, CachedInstance> = BTreeMap::new();
            if let Some(inst) = &spec.instances {
                for &(_, v) in batch.iter().chain(&negatives) {
                    if v >= n_labels {
                        cache.entry(v - n_labels).or_insert_with(|| {
                            let row = inst.features.row(inst.rows[v - n_labels]);
                            let pre = inst.map.apply(row);
                            let point = inst.map.embed_from_pre(&pre);
                            CachedInstance {
                                grad: vec![0.0; pre.len()],
                                pre,
                                point,
                            }
                        });
                    }
                }
            }

            label_grads.iter_mut().for_each(|g| *g = 0.0);
            let pairs = batch
                .iter()
                .map(|e| (*e, true))
                .chain(negatives.iter().map(|e| (*e, false)));
            for ((u, v), positive) in pairs {
                let y = if v < n_labels {
                    labels.row(v)
                } else {
                    cache[&(v - n_labels)].point.as_slice()
                };
                let Some((value, scale, g)) =
                    pair_term(labels.row(u), y, positive, &spec.params, spec.margin)?
                else {
                    continue;
                };
                epoch_loss += value;
                for i in 0..dim {
                    label_grads[u * dim + i] += scale * g.dx[i];
                }
                if v < n_labels {
                    for i in 0..dim {
                        label_grads[v * dim + i] += scale * g.dy[i];
                    }
                } else {
                    let c = cache.get_mut(&(v - n_labels)).expect("cached instance");
                    for i in 0..dim {
                        c.grad[i] += scale * g.dy[i];
                    }
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }

            label_opt.step(labels.as_mut_slice(), &label_grads, dim, &spec.params, &mut rng)?;
            if let (Some(inst), Some(opt)) = (spec.instances.as_mut(), map_opt.as_mut()) {
                let mut wgrad = vec![0.0; inst.map.weights().len()];
                for (&j, c) in &cache {
                    let gz = inst.map.pull_back(&c.pre, &c.grad);
                    inst.map
                        .accumulate_grad(inst.features.row(inst.rows[j]), &gz, &mut wgrad);
                }
                opt.step(inst.map.weights_mut(), &wgrad)?;
            }
        }
        let map = spec.instances.as_ref().map(|i| &*i.map);
        on_epoch(epoch, epoch_loss, labels, map)?;
    }
    Ok(())
}
