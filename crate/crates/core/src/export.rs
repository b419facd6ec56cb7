//! Two-dimensional coordinates for plotting label embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    /// Stored coordinates of a 2-D model.
    Raw2d,
    /// Projection onto the two leading principal components.
    Pca,
}

impl std::str::FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw2d" => Ok(ProjectionMethod::Raw2d),
            "pca" => Ok(ProjectionMethod::Pca),
            other => Err(Error::Format(format!("unknown projection '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub node_id: u32,
    pub x: f64,
    pub y: f64,
    pub level: usize,
}

/// Principal-component scores of the rows of `t` on the first two axes.
/// Each axis is signed so that its largest-magnitude loading is positive.
pub fn pca_2d(t: &EmbeddingTable) -> Result<Vec<[f64; 2]>> {
    let (n, d) = (t.len(), t.dim());
    if n == 0 {
        return Err(Error::Inconsistent("cannot project an empty model".into()));
    }
    let x = DMatrix::from_row_slice(n, d, t.as_slice());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
            if lead < 0.0 {
                v.iter().map(|c| -c).collect()
            } else {
                v
            }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let mut p = [0.0; 2];
            for (slot, axis) in p.iter_mut().zip(&axes) {
                *slot = centered.row(i).iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            p
        })
        .collect())
}

/// One point per node in node order.
pub fn export_2d(t: &EmbeddingTable, h: &Hierarchy, method: ProjectionMethod) -> Result<Vec<Point2>> {
    if t.is_empty() {
        return Err(Error::Inconsistent("cannot project an empty model".into()));
    }
    if t.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: t.len(),
        });
    }
    let coords: Vec<[f64; 2]> = match method {
        ProjectionMethod::Raw2d => {
            if t.dim() != 2 {
                return Err(Error::Inconsistent(format!(
                    "raw export needs a 2-D model, got dimension {}",
                    t.dim()
                )));
            }
            (0..t.len()).map(|i| [t.row(i)[0], t.row(i)[1]]).collect()
        }
        ProjectionMethod::Pca => pca_2d(t)?,
    };
    Ok(coords
        .into_iter()
        .enumerate()
        .map(|(i, [x, y])| Point2 {
            node_id: h.id_of(i),
            x,
            y,
            level: h.level_of(i),
        })
        .collect())
}
