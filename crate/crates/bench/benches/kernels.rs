//! Hot paths: pairwise energies, closure construction, the label loss, the
//! classifier heads and joint prediction.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};

use hierembed::embed::{max_margin_loss, EmbeddingTable};
use hierembed::geometry::energy_gradients;
use hierembed::heads::{head_loss, HeadKind, HeadLayout};
use hierembed::hierarchy::generate_synthetic_tree;
use hierembed::joint::{classify_all, JointModel, LinearMap};
use hierembed::synth::{gaussian_features, SynthConfig};
use hierembed::{ConeParams, Edge, Geometry, SeededRng};

const DIM: usize = 10;

fn energies(c: &mut Criterion) {
    let mut rng = SeededRng::seed_from_u64(0);
    let mut group = c.benchmark_group("energy_gradients");
    for g in [Geometry::Oe, Geometry::Ec, Geometry::Hc] {
        let p = ConeParams::new(g, 0.1).unwrap();
        let table = EmbeddingTable::random(2, DIM, &p, &mut rng);
        group.bench_function(BenchmarkId::from_parameter(format!("{g:?}")), |b| {
            b.iter(|| energy_gradients(black_box(table.row(0)), black_box(table.row(1)), &p))
        });
    }
    group.finish();
}

fn closure(c: &mut Criterion) {
    let mut group = c.benchmark_group("transitive_closure");
    for (levels, branching) in [(4, 3), (3, 7), (5, 4)] {
        let h = generate_synthetic_tree(levels, branching).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("L{levels}b{branching}")), |b| {
            b.iter(|| h.transitive_closure().unwrap())
        });
    }
    group.finish();
}

fn label_loss(c: &mut Criterion) {
    let h = generate_synthetic_tree(4, 3).unwrap();
    let pos: Vec<Edge> = h.transitive_closure().unwrap().iter().collect();
    let mut rng = SeededRng::seed_from_u64(1);
    let neg: Vec<Edge> = (0..pos.len())
        .map(|_| (rng.random_range(0..h.len()), rng.random_range(0..h.len())))
        .filter(|(a, b)| a != b)
        .collect();
    let mut group = c.benchmark_group("max_margin_loss_L4b3");
    for g in [Geometry::Oe, Geometry::Ec, Geometry::Hc] {
        let p = ConeParams::new(g, 0.1).unwrap();
        let table = EmbeddingTable::random(h.len(), DIM, &p, &mut rng);
        group.bench_function(BenchmarkId::from_parameter(format!("{g:?}")), |b| {
            b.iter(|| max_margin_loss(&pos, &neg, &table, &p, 1.0).unwrap())
        });
    }
    group.finish();
}

fn heads(c: &mut Criterion) {
    let h = generate_synthetic_tree(4, 3).unwrap();
    let layout = HeadLayout::new(&h);
    let path = h.path(h.len() - 1);
    let mut rng = SeededRng::seed_from_u64(2);
    let mut group = c.benchmark_group("head_loss_L4b3");
    for kind in HeadKind::ALL {
        let x: Vec<f64> = (0..kind.output_width(&layout)).map(|_| rng.random_range(-2.0..2.0)).collect();
        group.bench_function(BenchmarkId::from_parameter(kind.name()), |b| {
            b.iter(|| head_loss(kind, black_box(&x), &layout, &path).unwrap())
        });
    }
    group.finish();
}

fn joint_prediction(c: &mut Criterion) {
    let h = generate_synthetic_tree(4, 3).unwrap();
    let features = gaussian_features(&h, &SynthConfig::default()).unwrap();
    let rows: Vec<usize> = (0..features.len()).collect();
    let mut rng = SeededRng::seed_from_u64(3);
    let mut group = c.benchmark_group("classify_all_L4b3");
    group.sample_size(20);
    for g in [Geometry::Ec, Geometry::Hc] {
        let params = ConeParams::new(g, 0.1).unwrap();
        let model = JointModel {
            labels: EmbeddingTable::random(h.len(), DIM, &params, &mut rng),
            map: LinearMap::random(g, features.dim(), DIM, 0.05, &mut rng),
            params,
            margin: 1.0,
        };
        group.bench_function(BenchmarkId::from_parameter(format!("{g:?}")), |b| {
            b.iter(|| classify_all(&model, &h, &features, &rows).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, energies, closure, label_loss, heads, joint_prediction);
criterion_main!(benches);
