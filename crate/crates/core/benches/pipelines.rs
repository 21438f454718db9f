//! Data-parallel versus sequential throughput of the collection-level loops.
//!
//! Each group runs the same work twice: once through `advq_core::par` (rayon
//! when the `parallel` feature is on) and once as a plain iterator. Building
//! with `--no-default-features` turns the `par` side sequential as well, which
//! gives the fully sequential baseline for the per-layer loops too.

use std::hint::black_box;

use advq_core::bovw::train_codebook;
use advq_core::globalfeat::GlobalKind;
use advq_core::harness::{neural_features, render_collection, SynthSpec};
use advq_core::imagecore::Image;
use advq_core::localfeat::{detect_and_describe, SiftParams};
use advq_core::neuralnet::{init_network, NetworkSpec};
use advq_core::par;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn collection(n: usize) -> Vec<Image> {
    let spec = SynthSpec { classes: 2, views: 2, distractors: n.saturating_sub(4), ..Default::default() };
    render_collection(&spec, 3).unwrap().into_iter().map(|s| s.image).collect()
}

fn mode() -> &'static str {
    if par::is_parallel() {
        "rayon"
    } else {
        "no-rayon"
    }
}

fn bench_neural(c: &mut Criterion) {
    let imgs = collection(16);
    let net = init_network(&NetworkSpec::default(), 0).unwrap();
    let mut g = c.benchmark_group(format!("neural_features/{}", mode()));
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("par", imgs.len()), |b| {
        b.iter(|| par::map(&imgs, |im| neural_features(&net, 128, im).unwrap()))
    });
    g.bench_function(BenchmarkId::new("seq", imgs.len()), |b| {
        b.iter(|| imgs.iter().map(|im| neural_features(&net, 128, im).unwrap()).collect::<Vec<_>>())
    });
    g.finish();
}

fn bench_sift(c: &mut Criterion) {
    let imgs = collection(8);
    let grays: Vec<_> = imgs.iter().map(Image::to_grayscale).collect();
    let p = SiftParams::default();
    let mut g = c.benchmark_group(format!("sift/{}", mode()));
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("par", grays.len()), |b| {
        b.iter(|| par::map(&grays, |im| detect_and_describe(im, &p).unwrap().descriptors.len()))
    });
    g.bench_function(BenchmarkId::new("seq", grays.len()), |b| {
        b.iter(|| grays.iter().map(|im| detect_and_describe(im, &p).unwrap().descriptors.len()).collect::<Vec<_>>())
    });
    g.finish();
}

fn bench_global(c: &mut Criterion) {
    let imgs = collection(16);
    let mut g = c.benchmark_group(format!("global/{}", mode()));
    g.sample_size(10);
    for kind in [GlobalKind::Cedd, GlobalKind::Gist] {
        g.bench_function(BenchmarkId::new(format!("{}_par", kind.name()), imgs.len()), |b| {
            b.iter(|| par::map(&imgs, |im| kind.extract(im).unwrap()))
        });
        g.bench_function(BenchmarkId::new(format!("{}_seq", kind.name()), imgs.len()), |b| {
            b.iter(|| imgs.iter().map(|im| kind.extract(im).unwrap()).collect::<Vec<_>>())
        });
    }
    g.finish();
}

fn bench_codebook(c: &mut Criterion) {
    let imgs = collection(8);
    let p = SiftParams::default();
    let descs: Vec<Vec<f32>> = imgs
        .iter()
        .flat_map(|im| detect_and_describe(&im.to_grayscale(), &p).unwrap().descriptors)
        .map(|d| d.0)
        .collect();
    let (cb, _) = train_codebook(&descs, 64, 1, 10).unwrap();
    let mut g = c.benchmark_group(format!("codebook/{}", mode()));
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("assign_par", descs.len()), |b| b.iter(|| cb.assign_all(black_box(&descs))));
    g.bench_function(BenchmarkId::new("assign_seq", descs.len()), |b| {
        b.iter(|| descs.iter().map(|d| cb.assign(d)).collect::<Vec<_>>())
    });
    g.bench_function(BenchmarkId::new("train_k64", descs.len()), |b| {
        b.iter(|| train_codebook(black_box(&descs), 64, 1, 10).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_neural, bench_sift, bench_global, bench_codebook);
criterion_main!(benches);
