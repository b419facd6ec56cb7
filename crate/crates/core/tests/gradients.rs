//! Analytic gradients against central finite differences.

use approx::assert_relative_eq;
use proptest::prelude::*;

use hierembed::geometry::{self, energy_gradients, exp_map_zero, exp_map_zero_vjp};
use hierembed::heads::{head_loss, HeadKind, HeadLayout};
use hierembed::hierarchy::generate_synthetic_tree;
use hierembed::{ConeParams, Geometry};

const H: f64 = 1e-5;

fn central(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let hi = f(&p);
            p[i] = x[i] - H;
            let lo = f(&p);
            p[i] = x[i];
            (hi - lo) / (2.0 * H)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64]) {
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(1e-8, f64::max);
    for (a, n) in analytic.iter().zip(numeric) {
        assert!((a - n).abs() / scale < 1e-4, "analytic {analytic:?} vs numeric {numeric:?}");
    }
}

fn scaled(v: Vec<f64>, r: f64) -> Vec<f64> {
    let n = geometry::norm(&v).max(1e-12);
    v.into_iter().map(|c| c * r / n).collect()
}

fn direction(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim).prop_filter("non-zero", |v| geometry::norm(v) > 0.1)
}

fn check_cone(g: Geometry, x: Vec<f64>, y: Vec<f64>) -> Result<(), TestCaseError> {
    let p = ConeParams::new(g, 0.1).unwrap();
    let xi = if g == Geometry::Ec { geometry::euclid_xi(&x, &y) } else { geometry::hyper_xi(&x, &y) };
    let (Ok(xi), Ok(psi)) = (xi, geometry::aperture(&x, &p)) else {
        return Err(TestCaseError::reject("singular pair"));
    };
    prop_assume!(xi - psi > 1e-3 && xi < std::f64::consts::PI - 1e-3);
    let eg = energy_gradients(&x, &y, &p).unwrap();
    let d = x.len();
    let mut xy = x.clone();
    xy.extend_from_slice(&y);
    let mut analytic = eg.dx;
    analytic.extend(eg.dy);
    assert_close(&analytic, &central(|v| p.energy(&v[..d], &v[d..]).unwrap(), &xy));
    Ok(())
}

proptest! {
    #[test]
    fn oe_energy_gradient(x in prop::collection::vec(-2.0..2.0f64, 4), y in prop::collection::vec(-2.0..2.0f64, 4), squared in any::<bool>()) {
        prop_assume!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() > 1e-3));
        prop_assume!(x.iter().zip(&y).any(|(a, b)| a > b));
        let mut p = ConeParams::new(Geometry::Oe, 0.1).unwrap();
        p.squared = squared;
        let eg = energy_gradients(&x, &y, &p).unwrap();
        let mut xy = x.clone();
        xy.extend_from_slice(&y);
        let mut analytic = eg.dx;
        analytic.extend(eg.dy);
        assert_close(&analytic, &central(|v| p.energy(&v[..4], &v[4..]).unwrap(), &xy));
    }

    #[test]
    fn euclid_cone_gradient(dx in direction(3), rx in 0.15..0.95f64, dy in direction(3), ry in 0.05..0.95f64) {
        check_cone(Geometry::Ec, scaled(dx, rx), scaled(dy, ry))?;
    }

    #[test]
    fn hyper_cone_gradient(dx in direction(3), rx in 0.15..0.95f64, dy in direction(3), ry in 0.05..0.95f64) {
        check_cone(Geometry::Hc, scaled(dx, rx), scaled(dy, ry))?;
    }

    #[test]
    fn exp_zero_pullback(v in prop::collection::vec(-2.0..2.0f64, 3), g in prop::collection::vec(-1.0..1.0f64, 3)) {
        prop_assume!(geometry::norm(&v) > 1e-3);
        let f = |u: &[f64]| geometry::dot(&exp_map_zero(u), &g);
        assert_close(&exp_map_zero_vjp(&v, &g), &central(f, &v));
    }

    #[test]
    fn head_loss_gradients(seed in prop::collection::vec(-3.0..3.0f64, 40), leaf in 13usize..40, kind in prop::sample::select(HeadKind::ALL.to_vec())) {
        let h = generate_synthetic_tree(4, 3).unwrap();
        let layout = HeadLayout::new(&h);
        let x = seed[..kind.output_width(&layout)].to_vec();
        let path = h.path(leaf);
        let (_, grad) = head_loss(kind, &x, &layout, &path).unwrap();
        assert_close(&grad, &central(|v| head_loss(kind, v, &layout, &path).unwrap().0, &x));
    }
}

#[test]
fn energy_value_at_known_pair() {
    // order-embedding violation (0.3, 0.4) → 0.5
    let p = ConeParams::new(Geometry::Oe, 0.1).unwrap();
    let eg = energy_gradients(&[1.3, 1.4], &[1.0, 1.0], &p).unwrap();
    assert_relative_eq!(eg.value, 0.5, epsilon = 1e-12);
    assert_relative_eq!(eg.dx[0], 0.6, epsilon = 1e-12);
    assert_relative_eq!(eg.dy[1], -0.8, epsilon = 1e-12);
}
