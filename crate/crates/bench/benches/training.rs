use std::hint::black_box;

use cdc_bench::problem;
use cdc_core::data::generate_scm_dataset;
use cdc_core::objectives::{gradients, loss};
use cdc_core::trainer::{evaluate, predict};
use cdc_core::{ScmConfig, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective/d=64,C=5,p=16,B=32");
    for templates in [1, 2, 4, 8] {
        let p = problem(64, 5, templates, 16, 32);
        group.bench_with_input(BenchmarkId::new("loss", templates), &p, |b, p| {
            b.iter(|| loss(black_box(&p.bank), &p.batch, &p.cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradients", templates), &p, |b, p| {
            b.iter(|| gradients(black_box(&p.bank), &p.batch, &p.cfg).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let scm = ScmConfig {
        test_per_class: 20,
        ..ScmConfig::default()
    };
    let ds = generate_scm_dataset(&scm).unwrap();
    let config = TrainConfig {
        tau: 0.05,
        ..TrainConfig::default()
    };
    let bank = cdc_core::trainer::initial_bank(&ds, &config).unwrap();
    let x = &ds.samples[0].features;
    c.bench_function("predict/d=64,C=10,M=4", |b| {
        b.iter(|| predict(black_box(x), &bank, &config).unwrap())
    });
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(20);
    group.bench_function("200 test samples", |b| {
        b.iter(|| evaluate(black_box(&ds), &bank, &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, objective, inference);
criterion_main!(benches);
