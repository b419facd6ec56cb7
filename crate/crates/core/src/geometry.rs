//! Order-violation energies and Poincaré-ball primitives.
//!
//! Three energies are provided, each with an analytic gradient:
//!
//! * order embeddings: `E(x, y) = ‖max(0, x − y)‖` (optionally squared),
//! * Euclidean entailment cones: `E = max(0, Ξ(x, y) − ψ(x))` with
//!   `ψ(x) = arcsin(K / ‖x‖)`,
//! * hyperbolic entailment cones on the unit Poincaré ball, with
//!   `ψ(x) = arcsin(K (1 − ‖x‖²) / ‖x‖)`.
//!
//! `Ξ(x, y)` is the angle between the cone axis at `x` and the direction
//! towards `y` (a straight segment in the Euclidean case, the geodesic tangent
//! in the hyperbolic one). Both angles are written as
//! `arccos(num(p, X, Y) / sqrt(Q(p, X, Y)))` with `p = ⟨x, y⟩`, `X = ‖x‖²`,
//! `Y = ‖y‖²`, which lets the gradient code share one chain rule.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance kept between projected points and the domain boundaries.
pub const DOMAIN_MARGIN: f64 = 1e-5;
/// Clamp applied to arccos/arcsin arguments.
pub const TRIG_CLAMP: f64 = 1e-12;
/// Denominator guard.
pub const DENOM_EPS: f64 = 1e-15;
/// Largest norm an exp-map result may take.
pub const BALL_MAX_NORM: f64 = 1.0 - 1e-12;
/// Upper norm bound for Euclidean cone apexes.
pub const EUCLID_CONE_MAX_NORM: f64 = 1.0;
/// Default aperture constant.
pub const DEFAULT_K: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Order embeddings in `R^N`.
    Oe,
    /// Euclidean entailment cones in `R^N`.
    Ec,
    /// Hyperbolic entailment cones in the Poincaré ball.
    Hc,
}

impl Geometry {
    pub fn tag(self) -> u8 {
        match self {
            Geometry::Oe => 0,
            Geometry::Ec => 1,
            Geometry::Hc => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Geometry::Oe),
            1 => Some(Geometry::Ec),
            2 => Some(Geometry::Hc),
            _ => None,
        }
    }

    pub fn is_hyperbolic(self) -> bool {
        self == Geometry::Hc
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Oe => "oe",
            Geometry::Ec => "ec",
            Geometry::Hc => "hc",
        })
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oe" => Ok(Geometry::Oe),
            "ec" => Ok(Geometry::Ec),
            "hc" => Ok(Geometry::Hc),
            other => Err(Error::Format(format!("unknown geometry '{other}'"))),
        }
    }
}

/// Energy configuration: geometry, aperture constant and the OE variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub geometry: Geometry,
    pub k: f64,
    /// Use `‖max(0, x − y)‖²` for order embeddings.
    #[serde(default)]
    pub squared: bool,
}

impl ConeParams {
    pub fn new(geometry: Geometry, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Inconsistent(format!("aperture constant K={k} must be positive")));
        }
        Ok(Self {
            geometry,
            k,
            squared: false,
        })
    }

    /// Smallest apex norm for which the aperture is defined.
    pub fn epsilon(&self) -> f64 {
        match self.geometry {
            Geometry::Oe => 0.0,
            Geometry::Ec => self.k,
            // root of K (1 − r²) / r = 1
            Geometry::Hc => (-1.0 + (1.0 + 4.0 * self.k * self.k).sqrt()) / (2.0 * self.k),
        }
    }

    /// Norm bound of the apex domain (infinite for order embeddings).
    pub fn domain_max(&self) -> f64 {
        match self.geometry {
            Geometry::Oe => f64::INFINITY,
            Geometry::Ec => EUCLID_CONE_MAX_NORM,
            Geometry::Hc => 1.0,
        }
    }

    pub fn energy(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self.geometry {
            Geometry::Oe if self.squared => oe_energy_squared(x, y),
            Geometry::Oe => oe_energy(x, y),
            _ => cone_energy(x, y, self),
        }
    }
}

impl Default for ConeParams {
    fn default() -> Self {
        Self {
            geometry: Geometry::Ec,
            k: DEFAULT_K,
            squared: false,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

fn check_in_ball(x: &[f64]) -> Result<f64> {
    let n2 = norm_sq(x);
    if !(n2 < 1.0) {
        return Err(Error::Domain {
            norm: n2.sqrt(),
            min: 0.0,
            max: 1.0,
        });
    }
    Ok(n2)
}

fn clamp_unit(c: f64) -> (f64, bool) {
    let lim = 1.0 - TRIG_CLAMP;
    if c > lim {
        (lim, true)
    } else if c < -lim {
        (-lim, true)
    } else {
        (c, false)
    }
}

/// `‖max(0, x − y)‖`, zero iff `y_i ≥ x_i` for every coordinate.
pub fn oe_energy(x: &[f64], y: &[f64]) -> Result<f64> {
    oe_energy_squared(x, y).map(f64::sqrt)
}

pub fn oe_energy_squared(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).max(0.0).powi(2)).sum())
}

/// The two angle formulas, expressed through `p = ⟨x,y⟩`, `X = ‖x‖²`,
/// `Y = ‖y‖²` and `D2 = ‖x − y‖²`.
#[derive(Clone, Copy)]
enum AngleKind {
    Euclidean,
    Hyperbolic,
}

/// Cosine of `Ξ` and its partials with respect to `(p, X, Y)`.
struct CosXi {
    cos: f64,
    d_p: f64,
    d_x: f64,
    d_y: f64,
}

fn cos_xi(kind: AngleKind, x: &[f64], y: &[f64]) -> Result<CosXi> {
    check_dims(x, y)?;
    let p = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let d2 = dist_sq(x, y);
    if xx.sqrt() < DENOM_EPS {
        return Err(Error::Singularity("cone apex at the origin"));
    }
    if d2.sqrt() < DENOM_EPS {
        return Err(Error::Singularity("coincident points"));
    }
    let (num, dn, q, dl) = match kind {
        AngleKind::Euclidean => {
            // ⟨x, y − x⟩ / (‖x‖ ‖y − x‖)
            let num = p - xx;
            let dn = [1.0, -1.0, 0.0];
            let dl = [-1.0 / d2, 0.5 * (1.0 / xx + 1.0 / d2), 0.5 / d2];
            (num, dn, xx * d2, dl)
        }
        AngleKind::Hyperbolic => {
            let s = 1.0 + xx * yy - 2.0 * p;
            let num = p * (1.0 + xx) - xx * (1.0 + yy);
            let dn = [1.0 + xx, p - 1.0 - yy, -xx];
            let dl = [
                -1.0 / d2 - 1.0 / s,
                0.5 * (1.0 / xx + 1.0 / d2 + yy / s),
                0.5 * (1.0 / d2 + xx / s),
            ];
            (num, dn, xx * d2 * s, dl)
        }
    };
    let den = q.sqrt().max(DENOM_EPS);
    let cos = num / den;
    Ok(CosXi {
        cos,
        d_p: dn[0] / den - cos * dl[0],
        d_x: dn[1] / den - cos * dl[1],
        d_y: dn[2] / den - cos * dl[2],
    })
}

fn xi(kind: AngleKind, x: &[f64], y: &[f64]) -> Result<f64> {
    let c = cos_xi(kind, x, y)?;
    Ok(clamp_unit(c.cos).0.acos())
}

/// Angle at `x` between the axis `x̂` and the segment `y − x`.
pub fn euclid_xi(x: &[f64], y: &[f64]) -> Result<f64> {
    xi(AngleKind::Euclidean, x, y)
}

/// Angle at `x` between the radial axis and the geodesic towards `y`.
pub fn hyper_xi(x: &[f64], y: &[f64]) -> Result<f64> {
    check_in_ball(x)?;
    check_in_ball(y)?;
    xi(AngleKind::Hyperbolic, x, y)
}

fn aperture_arg(x: &[f64], p: &ConeParams) -> Result<(f64, f64)> {
    let r = norm(x);
    let eps = p.epsilon();
    let out_of_domain = match p.geometry {
        Geometry::Oe => return Err(Error::Inconsistent("order embeddings have no aperture".into())),
        Geometry::Ec => r < eps,
        Geometry::Hc => r < eps || r >= 1.0,
    };
    if out_of_domain {
        return Err(Error::Domain {
            norm: r,
            min: eps,
            max: p.domain_max(),
        });
    }
    let g = match p.geometry {
        Geometry::Hc => p.k * (1.0 - r * r) / r,
        _ => p.k / r,
    };
    Ok((r, g))
}

/// `arcsin(K / ‖x‖)`, defined for `‖x‖ ≥ K`.
pub fn euclid_aperture(x: &[f64], k: f64) -> Result<f64> {
    aperture(x, &ConeParams::new(Geometry::Ec, k)?)
}

/// `arcsin(K (1 − ‖x‖²) / ‖x‖)`, defined for `ε(K) ≤ ‖x‖ < 1`.
pub fn hyper_aperture(x: &[f64], k: f64) -> Result<f64> {
    aperture(x, &ConeParams::new(Geometry::Hc, k)?)
}

/// Half-aperture of the cone at `x` for the geometry in `p`.
pub fn aperture(x: &[f64], p: &ConeParams) -> Result<f64> {
    let (_, g) = aperture_arg(x, p)?;
    Ok(clamp_unit(g).0.asin())
}

/// `max(0, Ξ(x, y) − ψ(x))` for either cone geometry.
pub fn cone_energy(x: &[f64], y: &[f64], p: &ConeParams) -> Result<f64> {
    let xi = match p.geometry {
        Geometry::Ec => euclid_xi(x, y)?,
        Geometry::Hc => hyper_xi(x, y)?,
        Geometry::Oe => return Err(Error::Inconsistent("not a cone geometry".into())),
    };
    Ok((xi - aperture(x, p)?).max(0.0))
}

/// Energy value with gradients with respect to both arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrad {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Energy and its gradients; the subgradient at hinge kinks is zero.
pub fn energy_gradients(x: &[f64], y: &[f64], p: &ConeParams) -> Result<EnergyGrad> {
    check_dims(x, y)?;
    match p.geometry {
        Geometry::Oe => Ok(oe_gradients(x, y, p.squared)),
        Geometry::Ec => cone_gradients(AngleKind::Euclidean, x, y, p),
        Geometry::Hc => {
            check_in_ball(y)?;
            cone_gradients(AngleKind::Hyperbolic, x, y, p)
        }
    }
}

fn oe_gradients(x: &[f64], y: &[f64], squared: bool) -> EnergyGrad {
    let m: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b).max(0.0)).collect();
    let e2 = norm_sq(&m);
    let (value, scale) = if squared {
        (e2, 2.0)
    } else if e2 > 0.0 {
        let e = e2.sqrt();
        (e, 1.0 / e)
    } else {
        (0.0, 0.0)
    };
    let dx: Vec<f64> = m.iter().map(|v| v * scale).collect();
    let dy = dx.iter().map(|v| -v).collect();
    EnergyGrad { value, dx, dy }
}

fn cone_gradients(kind: AngleKind, x: &[f64], y: &[f64], p: &ConeParams) -> Result<EnergyGrad> {
    let n = x.len();
    let (r, g) = aperture_arg(x, p)?;
    let c = cos_xi(kind, x, y)?;
    let (cos, xi_clamped) = clamp_unit(c.cos);
    let (g_c, psi_clamped) = clamp_unit(g);
    let value = cos.acos() - g_c.asin();
    if value <= 0.0 {
        return Ok(EnergyGrad {
            value: 0.0,
            dx: vec![0.0; n],
            dy: vec![0.0; n],
        });
    }

    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    if !xi_clamped {
        let dxi = -1.0 / (1.0 - cos * cos).sqrt();
        for i in 0..n {
            dx[i] += dxi * (c.d_p * y[i] + c.d_x * 2.0 * x[i]);
            dy[i] += dxi * (c.d_p * x[i] + c.d_y * 2.0 * y[i]);
        }
    }
    if !psi_clamped {
        let dg_dr = match kind {
            AngleKind::Euclidean => -p.k / (r * r),
            AngleKind::Hyperbolic => -p.k * (1.0 / (r * r) + 1.0),
        };
        let dpsi_dr = dg_dr / (1.0 - g_c * g_c).sqrt();
        for i in 0..n {
            dx[i] -= dpsi_dr * x[i] / r;
        }
    }
    Ok(EnergyGrad { value, dx, dy })
}

/// Hyperbolic distance on the unit Poincaré ball.
pub fn poincare_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x, y)?;
    let xx = check_in_ball(x)?;
    let yy = check_in_ball(y)?;
    let arg = 1.0 + 2.0 * dist_sq(x, y) / ((1.0 - xx) * (1.0 - yy));
    Ok(arg.max(1.0).acosh())
}

/// Conformal factor `λ_x = 2 / (1 − ‖x‖²)`.
pub fn conformal_factor(x: &[f64]) -> Result<f64> {
    Ok(2.0 / (1.0 - check_in_ball(x)?))
}

/// Möbius addition `x ⊕ y`.
pub fn mobius_add(x: &[f64], y: &[f64]) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = norm_sq(x);
    let yy = norm_sq(y);
    let a = 1.0 + 2.0 * xy + yy;
    let b = 1.0 - xx;
    let den = (1.0 + 2.0 * xy + xx * yy).max(DENOM_EPS);
    x.iter().zip(y).map(|(u, v)| (a * u + b * v) / den).collect()
}

fn cap_norm(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > BALL_MAX_NORM {
        let s = BALL_MAX_NORM / n;
        v.iter_mut().for_each(|c| *c *= s);
    }
    v
}

/// Exponential map of the Poincaré ball at `x`, written as
/// `x ⊕ tanh(λ_x ‖v‖ / 2) v̂`. The result always lies strictly inside the
/// ball.
pub fn exp_map(x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_dims(x, v)?;
    let lambda = conformal_factor(x)?;
    let nv = norm(v);
    if nv == 0.0 {
        return Ok(x.to_vec());
    }
    let t = (0.5 * lambda * nv).tanh() / nv;
    let step: Vec<f64> = cap_norm(v.iter().map(|c| c * t).collect());
    Ok(cap_norm(mobius_add(x, &step)))
}

/// `exp_0(v) = tanh(‖v‖) v̂`.
pub fn exp_map_zero(v: &[f64]) -> Vec<f64> {
    let nv = norm(v);
    if nv == 0.0 {
        return v.to_vec();
    }
    let t = nv.tanh() / nv;
    cap_norm(v.iter().map(|c| c * t).collect())
}

/// Pulls a gradient taken at `exp_0(v)` back to `v` (`Jᵀ g`).
pub fn exp_map_zero_vjp(v: &[f64], g: &[f64]) -> Vec<f64> {
    let r = norm(v);
    if r < 1e-8 {
        return g.to_vec();
    }
    let t = r.tanh();
    let a = t / r;
    let sech2 = 1.0 - t * t;
    let proj = dot(v, g) / (r * r);
    v.iter()
        .zip(g)
        .map(|(vi, gi)| a * gi + (sech2 - a) * proj * vi)
        .collect()
}

/// `(1 / λ_u)² = ((1 − ‖u‖²) / 2)²`.
pub fn rescale_factor(u: &[f64]) -> Result<f64> {
    let l = conformal_factor(u)?;
    Ok(1.0 / (l * l))
}

/// Riemannian gradient from a Euclidean one.
pub fn riemannian_rescale(u: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_dims(u, g)?;
    let f = rescale_factor(u)?;
    Ok(g.iter().map(|c| c * f).collect())
}

/// Clips the norm of `x` into `[ε + δ, max − δ]`, preserving its direction.
/// A zero vector gets a random direction from `rng`. Order embeddings are
/// left untouched.
pub fn project_to_domain<R: Rng + ?Sized>(x: &mut [f64], p: &ConeParams, rng: &mut R) {
    if p.geometry == Geometry::Oe {
        return;
    }
    let lo = p.epsilon() + DOMAIN_MARGIN;
    let hi = p.domain_max() - DOMAIN_MARGIN;
    let r = norm(x);
    if r == 0.0 || !r.is_finite() {
        for c in x.iter_mut() {
            *c = rng.random::<f64>() - 0.5;
        }
        let r = norm(x).max(DENOM_EPS);
        x.iter_mut().for_each(|c| *c *= lo / r);
        return;
    }
    let target = r.clamp(lo, hi);
    if target != r {
        let s = target / r;
        x.iter_mut().for_each(|c| *c *= s);
    }
}
