use adacl_bench::{features, model_and_batch, rng, tpe_history};
use adacl_core::hpo::{HyperConfig, SamplerKind, TpeSampler};
use adacl_core::memory::herding_select;
use adacl_core::strategies::{loss_and_gradients, LossSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_gradients");
    for batch in [32, 128] {
        let (model, examples) = model_and_batch(32, &[64], 10, batch);
        let refs: Vec<_> = examples.iter().collect();
        group.bench_with_input(BenchmarkId::from_parameter(batch), &refs, |b, refs| {
            b.iter(|| loss_and_gradients(&LossSpec::plain(), black_box(&model), refs).unwrap())
        });
    }
    group.finish();
}

fn tpe_suggest(c: &mut Criterion) {
    let mut group = c.benchmark_group("tpe_suggest");
    let base = HyperConfig {
        eta: 0.0,
        lambda: 1.0,
        m: 0,
    };
    for n in [10, 50] {
        let (space, history) = tpe_history(n);
        let tpe = TpeSampler::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &history, |b, history| {
            let mut r = rng(5);
            b.iter(|| SamplerKind::Tpe.suggest(&tpe, &space, black_box(history), &base, &mut r))
        });
    }
    group.finish();
}

fn herding(c: &mut Criterion) {
    let mut group = c.benchmark_group("herding_select");
    for n in [100, 500] {
        let feats = features(n, 64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &feats, |b, feats| {
            b.iter(|| herding_select(black_box(feats), 20).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, tpe_suggest, herding);
criterion_main!(benches);
