use criterion::{criterion_group, criterion_main, Criterion};
use himoe_core::alignment::{ntxent_loss, similarity_matrix};
use himoe_core::data::generate;
use himoe_core::metrics::ccc;
use himoe_core::{GeneratorConfig, Tape, Tensor};

fn ntxent(c: &mut Criterion) {
    let zi = Tensor::new(vec![32, 32], (0..1024).map(|i| ((i * 37 % 101) as f64).sin()).collect()).unwrap();
    let zj = Tensor::new(vec![32, 32], (0..1024).map(|i| ((i * 53 % 97) as f64).cos()).collect()).unwrap();
    c.bench_function("ntxent_b32_d32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let a = tape.param(zi.clone());
            let bb = tape.param(zj.clone());
            let s = similarity_matrix(&mut tape, a, bb, 0.1).unwrap();
            let l = ntxent_loss(&mut tape, s).unwrap();
            tape.backward(l).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let x: Vec<f64> = (0..10_000).map(|i| (i as f64 * 0.01).sin()).collect();
    let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 0.1 * (i as f64).cos()).collect();
    c.bench_function("ccc_10k", |b| b.iter(|| ccc(&x, &y).unwrap()));
}

fn synth(c: &mut Criterion) {
    let cfg = GeneratorConfig::default();
    let mut group = c.benchmark_group("generate");
    group.sample_size(10);
    group.bench_function("default_benchmark", |b| b.iter(|| generate(&cfg, 0).unwrap()));
    group.finish();
}

criterion_group!(benches, ntxent, metrics, synth);
criterion_main!(benches);
