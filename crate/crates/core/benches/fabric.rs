//! Sequential versus rayon paths for the fabric's data-parallel kernels.
//! Without the `parallel` feature only the sequential variants are measured.

use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fabric_core::embedding::Embedding;
use fabric_core::parallel;
use fabric_core::runtime::{run_scenario, FeatureSet, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn records(n: usize, dim: usize, seed: u64) -> Vec<(String, Embedding)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| (format!("r{i}"), Embedding::normalized((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())))
        .collect()
}

fn top_k(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    for n in [10_000, 100_000] {
        let data = records(n, 64, 1);
        let query = data[0].1.clone();
        group.bench_with_input(BenchmarkId::new("sequential", n), &data, |b, d| {
            b.iter(|| parallel::top_k_seq(&query, d.iter().map(|(id, e)| (id.as_str(), e)), black_box(10)).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &data, |b, d| {
            b.iter(|| parallel::top_k_par(&query, d, black_box(10)).unwrap())
        });
    }
    group.finish();
}

fn overlap(c: &mut Criterion) {
    let mut group = c.benchmark_group("pairwise_overlap");
    for n in [100, 400] {
        let tasks = records(n, 64, 2);
        group.bench_with_input(BenchmarkId::new("sequential", n), &tasks, |b, t| {
            b.iter(|| parallel::pairwise_overlap_seq(t, black_box(0.5)).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", n), &tasks, |b, t| {
            b.iter(|| parallel::pairwise_overlap_par(t, black_box(0.5)).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/logistics.json");
    let cfg = ScenarioConfig::from_path(&path).unwrap();
    let base = path.parent().unwrap();
    let names = ["attention", "micro_cache", "shared_cache", "prefetch", "quorum", "optimizer"];
    let sets: Vec<FeatureSet> = (0u32..64)
        .map(|mask| {
            let on: Vec<&str> = names.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| *n).collect();
            on.join(",").parse().unwrap()
        })
        .collect();
    let one = |f: &FeatureSet| {
        let mut cfg = cfg.clone();
        cfg.features = f.clone();
        run_scenario(&cfg, base, 42).unwrap()
    };
    let mut group = c.benchmark_group("feature_sweep");
    group.sample_size(10);
    group.bench_function("sequential", |b| b.iter(|| parallel::map_seq(&sets, one)));
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| b.iter(|| parallel::map_par(&sets, one)));
    group.finish();
}

criterion_group!(benches, top_k, overlap, sweep);
criterion_main!(benches);
