use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use situmatch::topics::{LdaConfig, LdaSampler};
use situmatch_bench::block_corpus;

fn sweep(c: &mut Criterion) {
    let docs = block_corpus(2000, 6, 100, 120, 3);
    let keys: Vec<u64> = (0..docs.len() as u64).collect();
    let cfg = LdaConfig::default();
    let mut group = c.benchmark_group("lda");
    group.sample_size(10);
    group.bench_function("gibbs sweep, 2000 docs, K=6", |b| {
        b.iter_batched(
            || LdaSampler::new(&docs, &keys, 6, 600, &cfg, 7).unwrap(),
            |mut s| s.sweep(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, sweep);
criterion_main!(benches);
