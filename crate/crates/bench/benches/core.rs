use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use std::hint::black_box;
use twostage_bench::{experiment, power_config, sim_config};
use twostage_core::distributions::chi2_quantile;
use twostage_core::{
    covariance_hat, estimate_power, min_quadratic_on_s, noncentrality, sample_size, test_effect, verify_equivalence,
    EffectKind,
};

fn bench_noncentrality(c: &mut Criterion) {
    let mut group = c.benchmark_group("noncentrality");
    for k in [1usize, 4, 10] {
        let q = chi2_quantile(0.95, k as f64).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &q, |b, &q| {
            b.iter(|| noncentrality(black_box(q), k, 0.2).unwrap())
        });
    }
    group.finish();
}

fn bench_sample_size(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_size");
    for m in [3usize, 6] {
        let cfg = power_config(m);
        for kind in EffectKind::ALL {
            group.bench_function(format!("{}/m{m}", kind.name()), |b| {
                b.iter(|| sample_size(black_box(&cfg), kind).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_qp(c: &mut Criterion) {
    let mut group = c.benchmark_group("min_quadratic_on_s");
    for k in [2usize, 4, 8] {
        let m = DMatrix::from_fn(k, k, |i, j| if i == j { 2.0 + i as f64 } else { 0.3 / (1.0 + (i + j) as f64) });
        group.bench_with_input(BenchmarkId::from_parameter(k), &m, |b, m| {
            b.iter(|| min_quadratic_on_s(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn bench_estimation(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimation");
    for j in [30usize, 300] {
        let data = experiment(j, 20, 1);
        group.bench_with_input(BenchmarkId::new("covariance_hat", j), &data, |b, d| {
            b.iter(|| covariance_hat(black_box(d)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("wald_se", j), &data, |b, d| {
            b.iter(|| test_effect(black_box(d), EffectKind::Se, 0.05).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("regression_check", j), &data, |b, d| {
            b.iter(|| verify_equivalence(black_box(d), 1e-10).unwrap())
        });
    }
    group.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let cfg = sim_config();
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    group.bench_function("power_de_j72_100reps", |b| {
        b.iter(|| estimate_power(black_box(&cfg), 72, EffectKind::De, 100, 7).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_noncentrality,
    bench_sample_size,
    bench_qp,
    bench_estimation,
    bench_simulation
);
criterion_main!(benches);
