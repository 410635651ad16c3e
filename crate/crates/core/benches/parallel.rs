use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use reefclip_core::alignment::{batch_gradients, PairExample, TextContext};
use reefclip_core::config::RunConfig;
use reefclip_core::eval::retrieval_scores;
use reefclip_core::par::with_threads;
use reefclip_core::pipeline::synthetic_batch;

fn setup() -> (reefclip_core::encoders::ModelParams, Vec<PairExample>) {
    let cfg = RunConfig {
        image_side: 32,
        seed: 1,
        ..RunConfig::default()
    };
    synthetic_batch(&cfg, 16).expect("synthetic batch")
}

fn bench(c: &mut Criterion) {
    let (params, batch) = setup();
    let refs: Vec<&PairExample> = batch.iter().collect();
    let images: Vec<_> = batch.iter().map(|e| e.image.clone()).collect();
    let texts: Vec<_> = batch.iter().map(|e| e.tokens.clone()).collect();
    // 0 means rayon's default pool size.
    for (label, threads) in [("sequential", 1), ("parallel", 0)] {
        let mut g = c.benchmark_group("batch_gradients");
        g.sample_size(10);
        g.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| with_threads(threads, || batch_gradients(&params, &refs, TextContext::Pairwise).unwrap()))
        });
        g.finish();
        let mut g = c.benchmark_group("retrieval_scores");
        g.sample_size(10);
        g.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| with_threads(threads, || retrieval_scores(&params, &images, &texts).unwrap()))
        });
        g.finish();
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
