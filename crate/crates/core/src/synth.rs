//! Gaussian hierarchical cluster features for desk-scale experiments.
//!
//! Every node gets a center: roots are drawn around the origin and each
//! child is offset from its parent with a spread that shrinks by `decay`
//! per level. Instances scatter around their leaf's center.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::joint::FeatureMatrix;
use crate::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_leaf: usize,
    pub dim: usize,
    /// Standard deviation of root centers.
    pub spread: f64,
    /// Factor applied to the offset spread at each deeper level.
    pub decay: f64,
    /// Within-cluster standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_leaf: 20,
            dim: 64,
            spread: 1.0,
            decay: 0.5,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// `per_leaf` instances for every childless node, numbered from 0 in node
/// order.
pub fn gaussian_features(h: &Hierarchy, cfg: &SynthConfig) -> Result<FeatureMatrix> {
    if cfg.dim == 0 || !(cfg.spread > 0.0 && cfg.decay > 0.0 && cfg.noise >= 0.0) {
        return Err(Error::Inconsistent("synthetic features need positive dim, spread and decay".into()));
    }
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut centers = vec![0.0; h.len() * cfg.dim];
    for i in 0..h.len() {
        let scale = cfg.spread * cfg.decay.powi(h.level_of(i) as i32 - 1);
        for k in 0..cfg.dim {
            let base = h.parent(i).map_or(0.0, |p| centers[p * cfg.dim + k]);
            centers[i * cfg.dim + k] = base + scale * unit.sample(&mut rng);
        }
    }
    let leaves: Vec<usize> = (0..h.len()).filter(|&i| h.children(i).is_empty()).collect();
    let n = leaves.len() * cfg.per_leaf;
    let mut data = Vec::with_capacity(n * cfg.dim);
    let mut leaf_ids = Vec::with_capacity(n);
    for &leaf in &leaves {
        let c = &centers[leaf * cfg.dim..(leaf + 1) * cfg.dim];
        for _ in 0..cfg.per_leaf {
            data.extend(c.iter().map(|v| v + cfg.noise * unit.sample(&mut rng)));
            leaf_ids.push(h.id_of(leaf));
        }
    }
    let ids = (0..n)
        .map(|i| u32::try_from(i).map_err(|_| Error::Inconsistent("too many instances".into())))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(cfg.dim, data, ids, leaf_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::generate_synthetic_tree;

    #[test]
    fn shape_and_determinism() {
        let h = generate_synthetic_tree(4, 3).unwrap();
        let cfg = SynthConfig::default();
        let f = gaussian_features(&h, &cfg).unwrap();
        assert_eq!(f.len(), 27 * 20);
        assert_eq!(f.dim(), 64);
        assert_eq!(f, gaussian_features(&h, &cfg).unwrap());
        assert!(f.leaf_indices(&h).unwrap().iter().all(|&l| h.level_of(l) == 4));
    }

    #[test]
    fn same_leaf_instances_are_closer_than_other_leaves() {
        let h = generate_synthetic_tree(3, 2).unwrap();
        let f = gaussian_features(&h, &SynthConfig { per_leaf: 2, ..Default::default() }).unwrap();
        let d = |a: usize, b: usize| -> f64 {
            f.row(a).iter().zip(f.row(b)).map(|(x, y)| (x - y).powi(2)).sum()
        };
        // rows 0, 1 share a leaf; row 2 belongs to its sibling
        assert!(d(0, 1) < d(0, 2));
    }
}
