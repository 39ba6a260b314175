use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use selclass::tuning::{tune_methods, tune_pnorm, tune_temperature};
use selclass::{aurc, auroc, BaseEstimatorKind, EstimatorSpec, GridSpec, Objective, TransformSpec};
use selclass_bench::{model, scores};

fn estimators(c: &mut Criterion) {
    let ds = model(2_000, 1_000, 1);
    let mut group = c.benchmark_group("apply");
    group.throughput(Throughput::Elements((ds.len() * ds.classes()) as u64));
    for base in [BaseEstimatorKind::Msp, BaseEstimatorKind::NegativeEntropy, BaseEstimatorKind::MaxLogit] {
        let spec = EstimatorSpec::new(base, TransformSpec::PNorm { p: 2, tau: 0.5 }).unwrap();
        group.bench_function(BenchmarkId::new("pnorm", base), |b| {
            b.iter(|| spec.apply(black_box(&ds.logits)).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    for n in [1_000, 10_000, 100_000] {
        let (conf, losses) = scores(n, 7);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("aurc", n), &n, |b, _| {
            b.iter(|| aurc(black_box(&conf), &losses).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("auroc", n), &n, |b, _| {
            b.iter(|| auroc(black_box(&conf), &losses).unwrap())
        });
    }
    group.finish();
}

fn tuning(c: &mut Criterion) {
    let ds = model(5_000, 100, 2);
    let grid = GridSpec::default();
    let mut group = c.benchmark_group("tune");
    group.sample_size(10);
    group.bench_function("msp-ts-aurc", |b| {
        b.iter(|| tune_temperature(BaseEstimatorKind::Msp, &ds, &grid.temperatures, Objective::Aurc).unwrap())
    });
    group.bench_function("max-logit-pnorm", |b| {
        b.iter(|| tune_pnorm(BaseEstimatorKind::MaxLogit, &ds, &grid.p_values, &grid.temperatures).unwrap())
    });
    group.bench_function("msp-pnorm", |b| {
        b.iter(|| tune_pnorm(BaseEstimatorKind::Msp, &ds, &grid.p_values, &grid.temperatures).unwrap())
    });
    let defaults = selclass::RunConfig::default().methods;
    group.bench_function("default-methods", |b| b.iter(|| tune_methods(&defaults, &ds, &grid).unwrap()));
    group.finish();
}

criterion_group!(benches, estimators, metrics, tuning);
criterion_main!(benches);
