//! Seeded workloads for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use situmatch::matching::Edge;

/// A sparse feasible graph shaped like a caliper-restricted matching
/// problem: each treated unit sees a window of nearby controls.
pub fn banded_edges(n: usize, window: usize, seed: u64) -> Vec<Edge> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for t in 0..n {
        let lo = t.saturating_sub(window / 2);
        for c in lo..(lo + window).min(n) {
            if rng.random_bool(0.6) {
                edges.push(Edge {
                    treated: t,
                    control: c,
                    weight: rng.random_range(0.0..0.35),
                });
            }
        }
    }
    edges
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:06}")).collect()
}

/// Documents drawn from `k` disjoint vocabularies of `block` words each.
pub fn block_corpus(n_docs: usize, k: usize, block: u32, len: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let base = (i % k) as u32 * block;
            (0..len).map(|_| base + rng.random_range(0..block)).collect()
        })
        .collect()
}
