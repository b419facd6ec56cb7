//! Leveled label hierarchies, transitive closures, edge splits and negative
//! sampling.
//!
//! Nodes are stored sorted by `(level, id)`, so every level occupies a
//! contiguous range of internal indices and, inside a level, a lower index
//! always means a lower external node id. All samplers take an explicit RNG.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SeededRng;

/// A directed edge `(parent, child)` over internal node indices: the child is
/// a sub-concept of the parent.
pub type Edge = (usize, usize);

/// Retry cap for rejection sampling of a single negative.
pub const MAX_RETRIES: usize = 100;

/// Negatives generated per evaluation positive, split evenly between the two
/// corrupted sides.
pub const EVAL_NEGATIVES_PER_SIDE: usize = 5;

/// Fraction of non-basic closure edges held out for validation and for test.
pub const HOLDOUT_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    /// 1-based level.
    pub level: usize,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    nodes: Vec<Node>,
    index_of: HashMap<u32, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    levels: Vec<Range<usize>>,
}

impl Hierarchy {
    /// Builds a hierarchy from nodes and `(parent_id, child_id)` edges.
    ///
    /// Level-1 nodes are roots (children of an implicit virtual root); every
    /// other node has exactly one parent on the level directly above it.
    pub fn new(mut nodes: Vec<Node>, edges: &[(u32, u32)]) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Structure("hierarchy has no nodes".into()));
        }
        nodes.sort_by_key(|n| (n.level, n.id));
        let mut index_of = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.level == 0 {
                return Err(Error::Structure(format!("node {} has level 0", n.id)));
            }
            if index_of.insert(n.id, i).is_some() {
                return Err(Error::Structure(format!("duplicate node id {}", n.id)));
            }
        }

        let n_levels = nodes.last().map(|n| n.level).unwrap_or(0);
        let mut levels = Vec::with_capacity(n_levels);
        let mut start = 0;
        for level in 1..=n_levels {
            let end = start + nodes[start..].iter().take_while(|n| n.level == level).count();
            if end == start {
                return Err(Error::Structure(format!("level {level} is empty")));
            }
            levels.push(start..end);
            start = end;
        }

        let mut parent = vec![None; nodes.len()];
        let mut children = vec![Vec::new(); nodes.len()];
        let mut seen = HashSet::with_capacity(edges.len());
        for &(p, c) in edges {
            let pi = *index_of
                .get(&p)
                .ok_or_else(|| Error::Structure(format!("edge references unknown node {p}")))?;
            let ci = *index_of
                .get(&c)
                .ok_or_else(|| Error::Structure(format!("edge references unknown node {c}")))?;
            if pi == ci {
                return Err(Error::Structure(format!("self-loop on node {p}")));
            }
            if !seen.insert((pi, ci)) {
                return Err(Error::Structure(format!("duplicate edge ({p}, {c})")));
            }
            if nodes[ci].level != nodes[pi].level + 1 {
                return Err(Error::Structure(format!(
                    "edge ({p}, {c}) connects level {} to level {}",
                    nodes[pi].level, nodes[ci].level
                )));
            }
            if parent[ci].replace(pi).is_some() {
                return Err(Error::Structure(format!("node {c} has more than one parent")));
            }
            children[pi].push(ci);
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.level > 1 && parent[i].is_none() {
                return Err(Error::Structure(format!("node {} has no parent", n.id)));
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }

        Ok(Self {
            nodes,
            index_of,
            parent,
            children,
            levels,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Index range of a 1-based level.
    pub fn level_range(&self, level: usize) -> Range<usize> {
        self.levels[level - 1].clone()
    }

    pub fn level_ranges(&self) -> &[Range<usize>] {
        &self.levels
    }

    /// Label count per level.
    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|r| r.len()).collect()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn level_of(&self, idx: usize) -> usize {
        self.nodes[idx].level
    }

    pub fn id_of(&self, idx: usize) -> u32 {
        self.nodes[idx].id
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        self.parent[idx]
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    /// Level-1 nodes, the children of the virtual root.
    pub fn roots(&self) -> Range<usize> {
        self.levels[0].clone()
    }

    /// Ancestors of `idx`, nearest first, excluding `idx` itself.
    pub fn ancestors(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parent[idx];
        while let Some(p) = cur {
            out.push(p);
            cur = self.parent[p];
        }
        out
    }

    /// Path from the level-1 ancestor down to `idx`, one node per level.
    pub fn path(&self, idx: usize) -> Vec<usize> {
        let mut p = self.ancestors(idx);
        p.reverse();
        p.push(idx);
        p
    }

    /// `true` if every node above the last level has at least one child.
    pub fn leaves_on_last_level(&self) -> bool {
        let last = self.n_levels();
        (0..self.len()).all(|i| self.level_of(i) == last || !self.children[i].is_empty())
    }

    /// The direct parent-child edges, sorted.
    pub fn basic_edges(&self) -> EdgeSet {
        let mut pairs: Vec<Edge> = (0..self.len())
            .filter_map(|c| self.parent[c].map(|p| (p, c)))
            .collect();
        pairs.sort_unstable();
        EdgeSet::from_sorted_unique(pairs, Polarity::Positive)
    }

    /// All `(ancestor, descendant)` pairs.
    pub fn transitive_closure(&self) -> Result<EdgeSet> {
        let basic: Vec<Edge> = self.basic_edges().pairs;
        closure_of_edges(self.len(), &basic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

/// A set of distinct, loop-free directed edges with a fast membership index.
#[derive(Debug, Clone)]
pub struct EdgeSet {
    pairs: Vec<Edge>,
    index: HashSet<Edge>,
    pub polarity: Polarity,
}

impl PartialEq for EdgeSet {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs && self.polarity == other.polarity
    }
}

impl EdgeSet {
    pub fn new(pairs: Vec<Edge>, polarity: Polarity) -> Result<Self> {
        let mut index = HashSet::with_capacity(pairs.len());
        for &(u, v) in &pairs {
            if u == v {
                return Err(Error::Structure(format!("self-loop on node index {u}")));
            }
            if !index.insert((u, v)) {
                return Err(Error::Structure(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Self {
            pairs,
            index,
            polarity,
        })
    }

    fn from_sorted_unique(pairs: Vec<Edge>, polarity: Polarity) -> Self {
        let index = pairs.iter().copied().collect();
        Self {
            pairs,
            index,
            polarity,
        }
    }

    pub fn empty(polarity: Polarity) -> Self {
        Self::from_sorted_unique(Vec::new(), polarity)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, edge: Edge) -> bool {
        self.index.contains(&edge)
    }

    pub fn pairs(&self) -> &[Edge] {
        &self.pairs
    }

    pub fn iter(&self) -> impl Iterator<Item = Edge> + '_ {
        self.pairs.iter().copied()
    }

    /// Adds an edge, returning `false` if it was already present.
    pub fn insert(&mut self, edge: Edge) -> bool {
        if edge.0 == edge.1 || !self.index.insert(edge) {
            return false;
        }
        self.pairs.push(edge);
        true
    }
}

/// Transitive closure of an arbitrary edge list over `n` nodes.
///
/// Fails with a structural error if the graph contains a cycle.
pub fn closure_of_edges(n: usize, edges: &[Edge]) -> Result<EdgeSet> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::Structure(format!("edge ({u}, {v}) out of range")));
        }
        adj[u].push(v);
    }
    detect_cycle(&adj)?;

    let mut pairs = Vec::new();
    let mut seen = vec![usize::MAX; n];
    let mut stack = Vec::new();
    for src in 0..n {
        stack.extend(adj[src].iter().copied());
        while let Some(v) = stack.pop() {
            if seen[v] == src {
                continue;
            }
            seen[v] = src;
            pairs.push((src, v));
            stack.extend(adj[v].iter().copied());
        }
    }
    pairs.sort_unstable();
    Ok(EdgeSet::from_sorted_unique(pairs, Polarity::Positive))
}

fn detect_cycle(adj: &[Vec<usize>]) -> Result<()> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; adj.len()];
    for start in 0..adj.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some((node, next)) = stack.pop() {
            if let Some(&child) = adj[node].get(next) {
                stack.push((node, next + 1));
                match state[child] {
                    0 => {
                        state[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => {
                        return Err(Error::Structure(format!(
                            "cycle detected through node index {child}"
                        )))
                    }
                    _ => {}
                }
            } else {
                state[node] = 2;
            }
        }
    }
    Ok(())
}

/// An evaluation negative attached to the positive it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negative {
    pub edge: Edge,
    /// Row of the originating positive in its split.
    pub pos_ref: usize,
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub train: EdgeSet,
    pub val: EdgeSet,
    pub test: EdgeSet,
    pub val_neg: Vec<Negative>,
    pub test_neg: Vec<Negative>,
    pub seed: u64,
}

impl SplitResult {
    pub fn val_negative_edges(&self) -> Vec<Edge> {
        self.val_neg.iter().map(|n| n.edge).collect()
    }

    pub fn test_negative_edges(&self) -> Vec<Edge> {
        self.test_neg.iter().map(|n| n.edge).collect()
    }
}

fn holdout_count(n: usize) -> usize {
    let k = (n as f64 * HOLDOUT_FRACTION).round() as usize;
    if k == 0 && n >= 2 {
        1
    } else {
        k
    }
}

/// Splits closure edges into train/val/test positives.
///
/// Basic edges always go to train. Of the shuffled non-basic edges, 5% go to
/// validation, 5% to test and `nonbasic_train_fraction` of the remainder to
/// train.
pub fn split_edges(h: &Hierarchy, nonbasic_train_fraction: f64, seed: u64) -> Result<SplitResult> {
    if !(0.0..=1.0).contains(&nonbasic_train_fraction) {
        return Err(Error::Inconsistent(format!(
            "train fraction {nonbasic_train_fraction} outside [0, 1]"
        )));
    }
    let closure = h.transitive_closure()?;
    let basic = h.basic_edges();
    let mut nonbasic: Vec<Edge> = closure.iter().filter(|e| !basic.contains(*e)).collect();
    let mut rng = SeededRng::seed_from_u64(seed);
    nonbasic.shuffle(&mut rng);

    let n_hold = holdout_count(nonbasic.len());
    let val: Vec<Edge> = nonbasic[..n_hold].to_vec();
    let test: Vec<Edge> = nonbasic[n_hold..(2 * n_hold).min(nonbasic.len())].to_vec();
    let rest = &nonbasic[(2 * n_hold).min(nonbasic.len())..];
    let n_train_extra = (rest.len() as f64 * nonbasic_train_fraction).round() as usize;

    let mut train = basic.pairs.clone();
    train.extend_from_slice(&rest[..n_train_extra]);
    train.sort_unstable();

    Ok(SplitResult {
        train: EdgeSet::from_sorted_unique(train, Polarity::Positive),
        val: EdgeSet::from_sorted_unique(val, Polarity::Positive),
        test: EdgeSet::from_sorted_unique(test, Polarity::Positive),
        val_neg: Vec::new(),
        test_neg: Vec::new(),
        seed,
    })
}

/// Which endpoint of an edge gets replaced when generating a negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    CorruptParent,
    CorruptChild,
}

fn corrupt(edge: Edge, side: Side, node: usize) -> Edge {
    match side {
        Side::CorruptParent => (node, edge.1),
        Side::CorruptChild => (edge.0, node),
    }
}

/// Draws one corruption of `edge` from `candidates` that `accept` admits.
///
/// Rejection sampling with [`MAX_RETRIES`] attempts, then an exhaustive scan
/// so a sparse-but-nonempty candidate set is still found.
fn draw_corruption<R: Rng + ?Sized>(
    edge: Edge,
    side: Side,
    candidates: Range<usize>,
    accept: &dyn Fn(Edge) -> bool,
    rng: &mut R,
) -> Option<Edge> {
    if candidates.is_empty() {
        return None;
    }
    for _ in 0..MAX_RETRIES {
        let e = corrupt(edge, side, rng.random_range(candidates.clone()));
        if e.0 != e.1 && accept(e) {
            return Some(e);
        }
    }
    let valid: Vec<Edge> = candidates
        .map(|n| corrupt(edge, side, n))
        .filter(|e| e.0 != e.1 && accept(*e))
        .collect();
    if valid.is_empty() {
        None
    } else {
        Some(valid[rng.random_range(0..valid.len())])
    }
}

fn eval_negatives_for<R: Rng + ?Sized>(
    edge: Edge,
    n_nodes: usize,
    closure: &EdgeSet,
    rng: &mut R,
) -> Result<Vec<Edge>> {
    let mut out: Vec<Edge> = Vec::with_capacity(2 * EVAL_NEGATIVES_PER_SIDE);
    let mut exhausted = [false; 2];
    let mut deficit = 0;
    for (slot, side) in [Side::CorruptParent, Side::CorruptChild].into_iter().enumerate() {
        for _ in 0..EVAL_NEGATIVES_PER_SIDE {
            let taken = out.clone();
            let accept = |e: Edge| !closure.contains(e) && !taken.contains(&e);
            match draw_corruption(edge, side, 0..n_nodes, &accept, rng) {
                Some(e) => out.push(e),
                None => {
                    exhausted[slot] = true;
                    deficit += 1;
                }
            }
        }
    }
    // A side with no valid corruption at all (e.g. a root parent, whose every
    // descendant is in the closure) hands its quota to the other side.
    for (slot, side) in [Side::CorruptParent, Side::CorruptChild].into_iter().enumerate() {
        if deficit == 0 || exhausted[slot] {
            continue;
        }
        while deficit > 0 {
            let taken = out.clone();
            let accept = |e: Edge| !closure.contains(e) && !taken.contains(&e);
            match draw_corruption(edge, side, 0..n_nodes, &accept, rng) {
                Some(e) => {
                    out.push(e);
                    deficit -= 1;
                }
                None => break,
            }
        }
    }
    if deficit > 0 {
        return Err(Error::Sampling(format!(
            "no non-closure corruption left for edge ({}, {})",
            edge.0, edge.1
        )));
    }
    Ok(out)
}

/// Attaches ten closure-free negatives to every validation and test positive:
/// five with a corrupted parent and five with a corrupted child.
pub fn augment_eval_negatives(
    mut split: SplitResult,
    closure: &EdgeSet,
    n_nodes: usize,
    seed: u64,
) -> Result<SplitResult> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut build = |pos: &EdgeSet| -> Result<Vec<Negative>> {
        let mut negs = Vec::with_capacity(pos.len() * 2 * EVAL_NEGATIVES_PER_SIDE);
        for (row, edge) in pos.iter().enumerate() {
            for e in eval_negatives_for(edge, n_nodes, closure, &mut rng)? {
                negs.push(Negative { edge: e, pos_ref: row });
            }
        }
        Ok(negs)
    };
    split.val_neg = build(&split.val)?;
    split.test_neg = build(&split.test)?;
    Ok(split)
}

/// One corruption of `edge` per level in `levels`, each drawn uniformly from
/// that level. Levels with no admissible candidate are skipped.
pub fn pick_per_level<R: Rng + ?Sized>(
    edge: Edge,
    side: Side,
    levels: &[Range<usize>],
    is_positive: &dyn Fn(Edge) -> bool,
    rng: &mut R,
) -> Vec<Edge> {
    let accept = |e: Edge| !is_positive(e);
    levels
        .iter()
        .filter_map(|r| draw_corruption(edge, side, r.clone(), &accept, rng))
        .collect()
}

impl Hierarchy {
    /// Pick-per-level negatives for `edge`, rejecting closure members.
    pub fn sample_negative_pick_per_level<R: Rng + ?Sized>(
        &self,
        edge: Edge,
        side: Side,
        closure: &EdgeSet,
        rng: &mut R,
    ) -> Vec<Edge> {
        pick_per_level(edge, side, &self.levels, &|e| closure.contains(e), rng)
    }
}

/// A complete tree with `levels` levels where every internal node has
/// `branching` children. Node ids are assigned breadth-first from 0.
pub fn generate_synthetic_tree(levels: usize, branching: usize) -> Result<Hierarchy> {
    if levels == 0 || branching == 0 {
        return Err(Error::Structure("levels and branching must be at least 1".into()));
    }
    let mut total: u64 = 0;
    let mut width: u64 = 1;
    for level in 0..levels {
        total = total
            .checked_add(width)
            .filter(|&t| t <= u32::MAX as u64)
            .ok_or_else(|| Error::Structure("synthetic tree node count overflows".into()))?;
        if level + 1 < levels {
            width = width
                .checked_mul(branching as u64)
                .ok_or_else(|| Error::Structure("synthetic tree node count overflows".into()))?;
        }
    }

    let mut nodes = Vec::with_capacity(total as usize);
    let mut edges = Vec::with_capacity(total as usize - 1);
    let mut prev: Vec<u32> = Vec::new();
    let mut next_id = 0u32;
    for level in 1..=levels {
        let mut cur = Vec::new();
        if level == 1 {
            cur.push(next_id);
            next_id += 1;
        } else {
            for &p in &prev {
                for _ in 0..branching {
                    edges.push((p, next_id));
                    cur.push(next_id);
                    next_id += 1;
                }
            }
        }
        for &id in &cur {
            nodes.push(Node {
                id,
                level,
                name: format!("n{id}"),
            });
        }
        prev = cur;
    }
    Hierarchy::new(nodes, &edges)
}
