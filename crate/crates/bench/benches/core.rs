use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use overdict_bench::fixture;
use overdict_core::coding::{code_batch, omp, LossSpec};
use overdict_core::learning::{odl_train, TrainConfig};
use overdict_core::metrics::dict_distance;
use overdict_core::model::gen_dictionary;

fn bench_omp(c: &mut Criterion) {
    let mut group = c.benchmark_group("omp");
    for p_prime in [70, 140, 300] {
        let (_, samples) = fixture(50, 70, 3, 1);
        let dict = gen_dictionary(50, p_prime, 3).unwrap();
        let x = samples.sample(0);
        group.bench_with_input(BenchmarkId::new("single_signal", p_prime), &p_prime, |b, _| {
            b.iter(|| omp(black_box(x), &dict, 3).unwrap())
        });
    }
    let (d0, samples) = fixture(50, 70, 3, 1000);
    group.bench_function("batch_1000_p70", |b| {
        b.iter(|| code_batch(&samples, &d0, LossSpec::L0Constrained { s: 3 }).unwrap())
    });
    group.finish();
}

fn bench_distance(c: &mut Criterion) {
    let mut group = c.benchmark_group("dict_distance");
    let d0 = gen_dictionary(50, 70, 1).unwrap();
    for p_prime in [70, 500] {
        let dhat = gen_dictionary(50, p_prime, 2).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(p_prime), &dhat, |b, dhat| {
            b.iter(|| dict_distance(&d0, black_box(dhat)).unwrap())
        });
    }
    group.finish();
}

fn bench_odl(c: &mut Criterion) {
    let mut group = c.benchmark_group("odl");
    group.sample_size(10);
    let (_, samples) = fixture(50, 70, 3, 300);
    for p_prime in [70, 140] {
        let cfg = TrainConfig::new(p_prime, 100, LossSpec::L0Constrained { s: 3 }, 0);
        group.bench_with_input(BenchmarkId::new("100_iterations", p_prime), &cfg, |b, cfg| {
            b.iter(|| odl_train(&samples, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_omp, bench_distance, bench_odl);
criterion_main!(benches);
