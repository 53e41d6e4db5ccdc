use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use fedqnn::qnn::{forward, gradient};
use fedqnn::{aggregate, CircuitSpec, Entanglement, GateKind};
use fedqnn_bench::{examples, params, state};

fn gates(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_gate");
    for n in [7usize, 12, 16] {
        let base = state(n);
        group.throughput(Throughput::Elements(1 << n));
        for (name, kind, targets) in [
            ("ry", GateKind::Ry(0.3), vec![n / 2]),
            ("rx", GateKind::Rx(0.3), vec![n / 2]),
            ("cnot", GateKind::CNot, vec![0, n - 1]),
            ("toffoli", GateKind::Toffoli, vec![0, 1, n - 1]),
        ] {
            group.bench_with_input(BenchmarkId::new(name, n), &targets, |b, t| {
                let mut s = base.clone();
                b.iter(|| s.apply(kind, black_box(t)).unwrap());
            });
        }
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let data = examples(50);
    let mut group = c.benchmark_group("model");
    for ent in [Entanglement::Linear, Entanglement::Full] {
        let spec = CircuitSpec::new(7, 2, ent);
        let p = params(&spec);
        group.bench_function(BenchmarkId::new("forward", ent), |b| {
            b.iter(|| forward(&spec, &p, black_box(&data[0].features)).unwrap())
        });
        group.throughput(Throughput::Elements(data.len() as u64));
        group.bench_function(BenchmarkId::new("gradient_100", ent), |b| {
            b.iter(|| gradient(&spec, &p, black_box(&data)).unwrap())
        });
    }
    group.finish();
}

fn aggregation(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate");
    for k in [3usize, 30, 300] {
        let vectors: Vec<Vec<f64>> = (0..k).map(|i| vec![i as f64 * 0.1; 15]).collect();
        let updates: Vec<(&[f64], f64)> = vectors.iter().map(|v| (v.as_slice(), 1.0 + v[0])).collect();
        group.bench_with_input(BenchmarkId::from_parameter(k), &updates, |b, u| {
            b.iter(|| aggregate(black_box(u)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gates, model, aggregation);
criterion_main!(benches);
