use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use contrastlab_core::combinatorics::coupon_coverage_exact;
use contrastlab_core::losses::{empirical_objective, triplet_loss_and_grad_into};
use contrastlab_core::trainer::objective_gradient;
use contrastlab_core::{rng, Encoder, LatentClassModel, TripletDataset};
use ndarray::Array1;

fn setup(width: usize) -> (Encoder, TripletDataset) {
    let model = LatentClassModel::random(5, 16, 0.15, None, &mut rng::stream(1)).unwrap();
    let data = TripletDataset::build(&model, 64, 0.0, 0.01, &mut rng::stream(2)).unwrap();
    let enc = Encoder::init(16, width, 2, 16, &mut rng::stream(3)).unwrap();
    (enc, data)
}

fn encoder(c: &mut Criterion) {
    let mut g = c.benchmark_group("encoder");
    for width in [128, 256] {
        let (enc, data) = setup(width);
        g.bench_with_input(BenchmarkId::new("forward_batch", width), &width, |b, _| {
            b.iter(|| enc.forward_batch(black_box(data.members().view())))
        });
        g.bench_with_input(BenchmarkId::new("objective", width), &width, |b, _| {
            b.iter(|| empirical_objective(&enc, black_box(&data)))
        });
        g.bench_with_input(BenchmarkId::new("objective_gradient", width), &width, |b, _| {
            b.iter(|| objective_gradient(&enc, black_box(&data)))
        });
    }
    g.finish();
}

fn triplet(c: &mut Criterion) {
    let z1 = Array1::from_vec((0..16).map(|i| (i as f64 * 0.37).sin()).collect());
    let z2 = Array1::from_vec((0..16).map(|i| (i as f64 * 0.11).cos()).collect());
    let z3 = Array1::from_vec((0..16).map(|i| (i as f64 * 0.53).sin()).collect());
    let (mut g1, mut g2, mut g3) = (vec![0.0; 16], vec![0.0; 16], vec![0.0; 16]);
    c.bench_function("triplet_loss_and_grad_d16", |b| {
        b.iter(|| {
            triplet_loss_and_grad_into(
                black_box(z1.view()),
                black_box(z2.view()),
                black_box(z3.view()),
                &mut g1,
                &mut g2,
                &mut g3,
            )
        })
    });
}

fn coverage(c: &mut Criterion) {
    let mut g = c.benchmark_group("coupon_coverage_exact");
    for k in [5usize, 10, 15] {
        let rho: Vec<f64> = (1..=k).map(|i| i as f64).collect();
        let total: f64 = rho.iter().sum();
        let rho: Vec<f64> = rho.iter().map(|p| p / total).collect();
        g.bench_with_input(BenchmarkId::new("nonuniform", k), &rho, |b, rho| {
            b.iter(|| coupon_coverage_exact(black_box(rho), 3 * rho.len()))
        });
        let uniform = vec![1.0 / k as f64; k];
        g.bench_with_input(BenchmarkId::new("uniform", k), &uniform, |b, rho| {
            b.iter(|| coupon_coverage_exact(black_box(rho), 3 * rho.len()))
        });
    }
    g.finish();
}

criterion_group!(benches, encoder, triplet, coverage);
criterion_main!(benches);
