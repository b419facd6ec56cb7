//! Adam and Riemannian SGD over row-major point tables.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, ConeParams, Geometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Rsgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "rsgd" => Ok(OptimizerKind::Rsgd),
            other => Err(Error::Format(format!("unknown optimizer '{other}'"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Longest hyperbolic distance a single RSGD step may move a point. The
/// aperture gradient grows without bound near the inner domain edge; an
/// uncapped step there lands on the rim, where the rescale freezes the point.
pub const RSGD_MAX_DISTANCE: f64 = 0.1;

/// Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        check_finite(grads)?;
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

fn check_finite(grads: &[f64]) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} = {}", grads[i])));
    }
    Ok(())
}

/// Optimizer state for an embedding table.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Adam(Adam),
    Rsgd { lr: f64 },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => OptimizerState::Adam(Adam::new(n_params, lr)),
            OptimizerKind::Rsgd => OptimizerState::Rsgd { lr },
        }
    }

    /// Updates a row-major table of `dim`-dimensional points and projects
    /// every row back into the cone domain.
    ///
    /// RSGD moves each hyperbolic point along `exp_u(−η (1/λ_u)² ∇u)`; for the
    /// Euclidean geometries it reduces to plain gradient descent.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        table: &mut [f64],
        grads: &[f64],
        dim: usize,
        params: &ConeParams,
        rng: &mut R,
    ) -> Result<()> {
        match self {
            OptimizerState::Adam(adam) => adam.step(table, grads)?,
            OptimizerState::Rsgd { lr } => {
                if table.len() != grads.len() {
                    return Err(Error::DimensionMismatch {
                        expected: table.len(),
                        got: grads.len(),
                    });
                }
                check_finite(grads)?;
                for (u, g) in table.chunks_mut(dim).zip(grads.chunks(dim)) {
                    if g.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    if params.geometry == Geometry::Hc {
                        let rg = geometry::riemannian_rescale(u, g)?;
                        let mut step: Vec<f64> = rg.iter().map(|v| -*lr * v).collect();
                        // the tangent norm scaled by λ_u is the distance travelled
                        let dist = geometry::conformal_factor(u)? * geometry::norm(&step);
                        if dist > RSGD_MAX_DISTANCE {
                            let s = RSGD_MAX_DISTANCE / dist;
                            step.iter_mut().for_each(|v| *v *= s);
                        }
                        let moved = geometry::exp_map(u, &step)?;
                        u.copy_from_slice(&moved);
                    } else {
                        for (ui, gi) in u.iter_mut().zip(g) {
                            *ui -= *lr * gi;
                        }
                    }
                }
            }
        }
        for row in table.chunks_mut(dim) {
            geometry::project_to_domain(row, params, rng);
        }
        Ok(())
    }
}
