//! Softmax attention over candidate data sources, probe budget allocation and
//! feedback-driven sharpening.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, DimensionMismatch, Embedding};

/// Floor added to usefulness so feedback never extinguishes a source.
pub const FEEDBACK_EPSILON: f64 = 0.01;

/// Usefulness assumed for sources without feedback.
pub const NEUTRAL_USEFULNESS: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("no candidate sources")]
    NoSources,
    #[error("selectivity must be positive, got {0}")]
    InvalidSelectivity(f64),
    #[error("probe budget must be at least 1")]
    ZeroBudget,
    #[error("feedback for unknown source `{0}`")]
    UnknownSource(String),
    #[error("usefulness for `{0}` outside [0, 1]: {1}")]
    InvalidUsefulness(String, f64),
    #[error("duplicate source id `{0}`")]
    DuplicateSource(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Relational,
    Vector,
    Stream,
    Inference,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Relational => "relational",
            Modality::Vector => "vector",
            Modality::Stream => "stream",
            Modality::Inference => "inference",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A registered data source as seen by the router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub modality: Modality,
    pub engine_id: String,
    pub summary_embedding: Embedding,
    /// Logical latency units.
    pub advertised_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDistribution {
    pub weights: Vec<(String, f64)>,
    pub tau_a: f64,
}

impl AttentionDistribution {
    pub fn weight(&self, source_id: &str) -> Option<f64> {
        self.weights
            .iter()
            .find(|(id, _)| id == source_id)
            .map(|(_, w)| *w)
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }
}

/// Softmax of similarities scaled by `1/tau_a`, shifted by the max for stability.
pub fn softmax(similarities: &[f64], tau_a: f64) -> Result<Vec<f64>, AttentionError> {
    if similarities.is_empty() {
        return Err(AttentionError::NoSources);
    }
    if !(tau_a > 0.0) || !tau_a.is_finite() {
        return Err(AttentionError::InvalidSelectivity(tau_a));
    }
    let scaled: Vec<f64> = similarities.iter().map(|s| s / tau_a).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

pub fn compute_attention(
    query: &Embedding,
    sources: &[SourceDescriptor],
    tau_a: f64,
) -> Result<AttentionDistribution, AttentionError> {
    if sources.is_empty() {
        return Err(AttentionError::NoSources);
    }
    let mut seen = BTreeSet::new();
    for s in sources {
        if !seen.insert(s.source_id.as_str()) {
            return Err(AttentionError::DuplicateSource(s.source_id.clone()));
        }
    }
    let sims = sources
        .iter()
        .map(|s| cosine(query, &s.summary_embedding))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = softmax(&sims, tau_a)?;
    Ok(AttentionDistribution {
        weights: sources
            .iter()
            .map(|s| s.source_id.clone())
            .zip(weights)
            .collect(),
        tau_a,
    })
}

/// Weight-descending order with lexicographic source id as tie-break.
pub(crate) fn by_weight_then_id(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(&b.0))
}

/// Top `min(k, n)` sources by weight; priorities equal the weights.
pub fn allocate_probes(
    dist: &AttentionDistribution,
    budget: usize,
) -> Result<Vec<(String, f64)>, AttentionError> {
    if budget == 0 {
        return Err(AttentionError::ZeroBudget);
    }
    let mut ranked = dist.weights.clone();
    ranked.sort_by(by_weight_then_id);
    ranked.truncate(budget);
    Ok(ranked)
}

/// Multiplicative reweight `w_i * (epsilon + usefulness_i)`, renormalized.
pub fn update_attention(
    dist: &AttentionDistribution,
    feedback: &[(String, f64)],
) -> Result<AttentionDistribution, AttentionError> {
    let mut usefulness: BTreeMap<&str, f64> = BTreeMap::new();
    for (id, u) in feedback {
        if dist.weight(id).is_none() {
            return Err(AttentionError::UnknownSource(id.clone()));
        }
        if !(0.0..=1.0).contains(u) {
            return Err(AttentionError::InvalidUsefulness(id.clone(), *u));
        }
        usefulness.insert(id.as_str(), *u);
    }
    if usefulness.is_empty() {
        return Ok(dist.clone());
    }
    let raw: Vec<f64> = dist
        .weights
        .iter()
        .map(|(id, w)| {
            let u = usefulness.get(id.as_str()).copied().unwrap_or(NEUTRAL_USEFULNESS);
            w * (FEEDBACK_EPSILON + u)
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(AttentionDistribution {
        weights: dist
            .weights
            .iter()
            .zip(raw)
            .map(|((id, _), r)| (id.clone(), r / sum))
            .collect(),
        tau_a: dist.tau_a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DEFAULT_DIM;
    use proptest::prelude::*;

    fn dist(ws: &[(&str, f64)]) -> AttentionDistribution {
        AttentionDistribution {
            weights: ws.iter().map(|(s, w)| (s.to_string(), *w)).collect(),
            tau_a: 1.0,
        }
    }

    fn axis(i: usize) -> Embedding {
        let mut v = vec![0.0; DEFAULT_DIM];
        v[i] = 1.0;
        Embedding::normalized(v)
    }

    fn source(id: &str, e: Embedding) -> SourceDescriptor {
        SourceDescriptor {
            source_id: id.into(),
            modality: Modality::Relational,
            engine_id: "pg".into(),
            summary_embedding: e,
            advertised_cost: 1.0,
        }
    }

    #[test]
    fn equal_similarities_give_uniform_weights() {
        let w = softmax(&[0.3, 0.3, 0.3, 0.3], 0.5).unwrap();
        for x in w {
            assert!((x - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_source_gets_all_mass() {
        let d = compute_attention(&axis(0), &[source("a", axis(3))], 0.2).unwrap();
        assert_eq!(d.weights, vec![("a".to_string(), 1.0)]);
    }

    #[test]
    fn two_source_reference_weights() {
        // sims (1.0, 0.0), tau 1: e/(e+1) and 1/(e+1)
        let e = std::f64::consts::E;
        let d = compute_attention(&axis(0), &[source("a", axis(0)), source("b", axis(1))], 1.0)
            .unwrap();
        assert!((d.weights[0].1 - e / (e + 1.0)).abs() < 1e-12);
        assert!((d.weights[0].1 - 0.731059).abs() < 1e-6);
        assert!((d.weights[1].1 - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert_eq!(compute_attention(&axis(0), &[], 1.0), Err(AttentionError::NoSources));
        assert_eq!(
            compute_attention(&axis(0), &[source("a", axis(0))], 0.0),
            Err(AttentionError::InvalidSelectivity(0.0))
        );
        assert!(matches!(
            compute_attention(&axis(0), &[source("a", axis(0)), source("a", axis(1))], 1.0),
            Err(AttentionError::DuplicateSource(_))
        ));
    }

    #[test]
    fn probe_allocation_rules() {
        let uniform = dist(&[("d", 0.25), ("b", 0.25), ("c", 0.25), ("a", 0.25)]);
        let top = allocate_probes(&uniform, 2).unwrap();
        assert_eq!(top.iter().map(|p| p.0.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        let skew = dist(&[("x", 0.2), ("y", 0.7), ("z", 0.1)]);
        assert_eq!(allocate_probes(&skew, 1).unwrap(), vec![("y".to_string(), 0.7)]);

        let three = dist(&[("p", 0.5), ("q", 0.3), ("r", 0.2)]);
        let all = allocate_probes(&three, 5).unwrap();
        assert_eq!(all.iter().map(|p| p.1).collect::<Vec<_>>(), [0.5, 0.3, 0.2]);

        assert_eq!(allocate_probes(&three, 0), Err(AttentionError::ZeroBudget));
    }

    #[test]
    fn neutral_feedback_leaves_distribution_unchanged() {
        let d = dist(&[("a", 0.6), ("b", 0.3), ("c", 0.1)]);
        let fb: Vec<_> = ["a", "b", "c"].iter().map(|s| (s.to_string(), 0.5)).collect();
        let u = update_attention(&d, &fb).unwrap();
        for ((_, x), (_, y)) in d.weights.iter().zip(&u.weights) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(update_attention(&d, &[]).unwrap(), d);
    }

    #[test]
    fn feedback_sharpens_by_hand_computed_ratio() {
        let d = dist(&[("a", 0.5), ("b", 0.5)]);
        let u = update_attention(&d, &[("a".into(), 1.0), ("b".into(), 0.0)]).unwrap();
        assert!((u.weights[0].1 - 1.01 / 1.02).abs() < 1e-12);
        assert!((u.weights[1].1 - 0.01 / 1.02).abs() < 1e-12);
        assert!((u.weights[0].1 - 0.9902).abs() < 1e-4);
    }

    #[test]
    fn feedback_for_unknown_source_fails() {
        let d = dist(&[("a", 1.0)]);
        assert_eq!(
            update_attention(&d, &[("zz".into(), 0.3)]),
            Err(AttentionError::UnknownSource("zz".into()))
        );
    }

    proptest! {
        #[test]
        fn weights_normalize(sims in prop::collection::vec(-1.0f64..=1.0, 1..20), tau in 0.01f64..5.0) {
            let w = softmax(&sims, tau).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn shift_invariance(sims in prop::collection::vec(-1.0f64..=1.0, 1..10), c in -1.0f64..1.0, tau in 0.05f64..2.0) {
            let shifted: Vec<f64> = sims.iter().map(|s| s + c).collect();
            let a = softmax(&sims, tau).unwrap();
            let b = softmax(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn monotone_in_own_similarity(sims in prop::collection::vec(-1.0f64..=1.0, 2..8), bump in 0.0f64..0.5, tau in 0.05f64..2.0) {
            let before = softmax(&sims, tau).unwrap()[0];
            let mut raised = sims.clone();
            raised[0] += bump;
            let after = softmax(&raised, tau).unwrap()[0];
            prop_assert!(after + 1e-15 >= before);
        }

        #[test]
        fn updates_never_zero_a_weight(
            ws in prop::collection::vec(0.01f64..1.0, 1..8),
            us in prop::collection::vec(0.0f64..=1.0, 8),
        ) {
            let sum: f64 = ws.iter().sum();
            let d = AttentionDistribution {
                weights: ws.iter().enumerate().map(|(i, w)| (format!("s{i}"), w / sum)).collect(),
                tau_a: 1.0,
            };
            let fb: Vec<_> = (0..ws.len()).map(|i| (format!("s{i}"), us[i])).collect();
            let u = update_attention(&d, &fb).unwrap();
            prop_assert!(u.weights.iter().all(|(_, w)| *w > 0.0));
            prop_assert!((u.total() - 1.0).abs() <= 1e-9);
        }
    }
}
