use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mdfsc::autoencoder::{ArchSpec, Autoencoder};
use mdfsc::features::multiscale_feature;
use mdfsc::ops::conv2d;
use mdfsc::rng::stream;
use mdfsc::sparse::{lasso_lars, Dictionary, LassoProblem, DEFAULT_TOL};
use mdfsc::tensor::Param;
use mdfsc_bench::{random_problem, random_tensor};

fn bench_conv(c: &mut Criterion) {
    let input = random_tensor([4, 16, 64, 64], 1);
    let weight = Param::new(random_tensor([32, 16, 3, 3], 2));
    let bias = Param::new(random_tensor([32, 1, 1, 1], 3));
    c.bench_function("conv2d 4x16x64x64 -> 32", |b| {
        b.iter(|| conv2d(black_box(&input), &weight, &bias).unwrap())
    });
}

fn bench_lasso(c: &mut Criterion) {
    let (atoms, f) = random_problem(448, 50, 4);
    let dict = Dictionary::from_columns(448, 50, &atoms).unwrap();
    c.bench_function("lasso_lars d=448 n=50", |b| {
        b.iter(|| {
            let p = LassoProblem { dict: &dict, f: black_box(&f), alpha: 1.0 };
            lasso_lars(&p, 50, DEFAULT_TOL).unwrap()
        })
    });
}

fn bench_feature(c: &mut Criterion) {
    let model = Autoencoder::build(ArchSpec::desk(3), &mut stream(5, "bench/init")).unwrap();
    let patch = random_tensor([1, 3, 16, 16], 6);
    c.bench_function("multiscale_feature desk 16x16", |b| {
        b.iter(|| multiscale_feature(&model, black_box(&patch)).unwrap())
    });
}

criterion_group!(benches, bench_conv, bench_lasso, bench_feature);
criterion_main!(benches);
