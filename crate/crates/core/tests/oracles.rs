//! Brute-force oracles for the retrieval, prefetch and cost components.

use std::collections::HashMap;

use fabric_core::embedding::{cosine, Embedding};
use fabric_core::fabric::ir::OpKind;
use fabric_core::fabric::vector::VectorStore;
use fabric_core::orchestration::optimizer::{tune_policies, CostModel, PolicyState};
use fabric_core::orchestration::prefetch::AccessModel;
use fabric_core::parallel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::normalized((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Full scan with an explicit dot product and a full sort.
fn brute_top_k(query: &[f64], records: &[(String, Vec<f64>)], k: usize) -> Vec<(String, f64)> {
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = records
        .iter()
        .map(|(id, v)| {
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = query.iter().zip(v).map(|(a, b)| a * b).sum();
            (id.clone(), dot / (qn * vn))
        })
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn vector_top_k_matches_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = VectorStore::default();
    let mut raw = Vec::new();
    for i in 0..10_000 {
        let e = random_unit(&mut rng, 64);
        let id = format!("doc-{i:05}");
        raw.push((id.clone(), e.values().to_vec()));
        store.insert(id, e, serde_json::json!({ "i": i }));
    }
    for trial in 0..5 {
        let q = random_unit(&mut rng, 64);
        for k in [1, 5, 10] {
            let got = store.top_k(&q, k).unwrap();
            let want = brute_top_k(q.values(), &raw, k);
            let got_ids: Vec<&str> = got.iter().map(|s| s.record_id.as_str()).collect();
            let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
            assert_eq!(got_ids, want_ids, "trial {trial} k {k}");
            for (g, w) in got.iter().zip(&want) {
                assert!((g.similarity - w.1).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn sequential_and_dispatching_top_k_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records: Vec<(String, Embedding)> = (0..2_000).map(|i| (format!("r{i}"), random_unit(&mut rng, 32))).collect();
    let q = random_unit(&mut rng, 32);
    let seq = parallel::top_k_seq(&q, records.iter().map(|(id, e)| (id.as_str(), e)), 25).unwrap();
    assert_eq!(seq, parallel::top_k(&q, &records, 25).unwrap());
}

#[test]
fn duplicated_vectors_rank_by_id() {
    let e = Embedding::normalized(vec![1.0, 2.0, 3.0]);
    let records: Vec<(String, Embedding)> = ["c", "a", "b"].iter().map(|id| (id.to_string(), e.clone())).collect();
    let got = parallel::top_k(&e, &records, 2).unwrap();
    let ids: Vec<&str> = got.iter().map(|s| s.record_id.as_str()).collect();
    assert_eq!(ids, ["a", "b"]);
    assert!((cosine(&e, &e).unwrap() - 1.0).abs() < 1e-12);
}

/// Independent transition-count predictor built from a HashMap of pairs.
fn oracle_predict(trace: &[String], current: &str, tau_p: f64, k: usize) -> Vec<(String, f64)> {
    let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
    for i in 1..trace.len() {
        *counts.entry((&trace[i - 1], &trace[i])).or_insert(0) += 1;
    }
    let total: u64 = counts.iter().filter(|((p, _), _)| *p == current).map(|(_, c)| c).sum();
    if total == 0 {
        return Vec::new();
    }
    let mut next: Vec<(&str, u64)> =
        counts.iter().filter(|((p, _), _)| *p == current).map(|((_, n), c)| (*n, *c)).collect();
    next.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    next.into_iter()
        .filter(|(_, c)| *c as f64 / total as f64 >= tau_p)
        .take(k)
        .map(|(n, c)| (n.to_string(), c as f64 / total as f64))
        .collect()
}

#[test]
fn prefetch_matches_transition_count_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let regions = rng.gen_range(1..=12);
        let len = rng.gen_range(0..=1_000);
        let tau_p = [0.1, 0.25, 0.4, 0.5, 0.9][case % 5];
        let k = rng.gen_range(1..=4);
        let trace: Vec<String> = (0..len).map(|_| format!("region-{}", rng.gen_range(0..regions))).collect();
        let mut model = AccessModel::new(tau_p, k).unwrap();
        model.observe_trace(&trace);
        for r in 0..=regions {
            let current = format!("region-{r}");
            assert_eq!(model.predict_prefetch(&current), oracle_predict(&trace, &current, tau_p, k), "case {case}");
        }
    }
}

#[test]
fn cost_estimate_converges_geometrically() {
    let alpha = 0.2;
    for (start, target) in [(500.0, 40.0), (1.0, 1000.0), (40.0, 40.0)] {
        let mut model = CostModel::new(alpha).unwrap();
        model.observe("pg", OpKind::Scan, start, 0.0, 0.0).unwrap();
        for n in 1..=200 {
            let est = model.observe("pg", OpKind::Scan, target, 0.0, 0.0).unwrap().est_latency;
            let geometric = (1.0f64 - alpha).powi(n) * (start - target);
            let roundoff = 4.0 * f64::from(n) * f64::EPSILON * start.max(target);
            assert!((est - target - geometric).abs() <= roundoff, "n {n}");
        }
        let est = model.estimate("pg", OpKind::Scan).unwrap().est_latency;
        assert!((est - target).abs() <= 0.05 * target);
    }
}

#[test]
fn constant_observations_stay_exact() {
    let mut model = CostModel::default();
    for _ in 0..200 {
        model.observe("vecdb", OpKind::VectorSearch, 37.0, 5.0, 0.01).unwrap();
    }
    let est = model.estimate("vecdb", OpKind::VectorSearch).unwrap();
    assert_eq!(est.sample_count, 200);
    assert!((est.est_latency - 37.0).abs() <= 0.05 * 37.0);
}

#[test]
fn tuning_never_leaves_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut policy = PolicyState::default();
    for step in 0..10_000 {
        policy.probe_useful_rate = rng.gen_range(0.0..=1.0);
        policy.revision_rate = rng.gen_range(0.0..=1.0);
        policy.shared_cache_hit_rate = rng.gen_range(0.0..=1.0);
        policy = tune_policies(&policy);
        assert!((1..=8).contains(&policy.k), "step {step}");
        assert!((10.0..=1000.0).contains(&policy.half_life), "step {step}");
        assert!((0.5..=0.99).contains(&policy.theta_q), "step {step}");
    }
}
