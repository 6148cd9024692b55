//! First-order Markov next-access predictor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PrefetchError {
    #[error("prefetch threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("prefetch top-k must be at least 1")]
    ZeroTopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessModel {
    pub transition_counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub tau_p: f64,
    pub top_k_prefetch: usize,
}

impl Default for AccessModel {
    fn default() -> Self {
        AccessModel { transition_counts: BTreeMap::new(), tau_p: 0.4, top_k_prefetch: 2 }
    }
}

impl AccessModel {
    pub fn new(tau_p: f64, top_k_prefetch: usize) -> Result<Self, PrefetchError> {
        if !(tau_p > 0.0 && tau_p <= 1.0) {
            return Err(PrefetchError::InvalidThreshold(tau_p));
        }
        if top_k_prefetch == 0 {
            return Err(PrefetchError::ZeroTopK);
        }
        Ok(AccessModel { transition_counts: BTreeMap::new(), tau_p, top_k_prefetch })
    }

    pub fn observe_access(&mut self, prev: &str, next: &str) {
        *self
            .transition_counts
            .entry(prev.to_string())
            .or_default()
            .entry(next.to_string())
            .or_default() += 1;
    }

    /// Observes every consecutive pair of a trace.
    pub fn observe_trace<S: AsRef<str>>(&mut self, trace: &[S]) {
        for w in trace.windows(2) {
            self.observe_access(w[0].as_ref(), w[1].as_ref());
        }
    }

    pub fn count(&self, prev: &str, next: &str) -> u64 {
        self.transition_counts.get(prev).and_then(|m| m.get(next)).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.transition_counts.values().flat_map(|m| m.values()).sum()
    }

    /// Successors with `P(next | current) >= tau_p`, at most `top_k_prefetch`,
    /// by probability descending then region id.
    pub fn predict_prefetch(&self, current: &str) -> Vec<(String, f64)> {
        let Some(row) = self.transition_counts.get(current) else {
            return Vec::new();
        };
        let total: u64 = row.values().sum();
        if total == 0 {
            return Vec::new();
        }
        let mut ranked: Vec<(&String, u64)> = row.iter().map(|(r, c)| (r, *c)).collect();
        // Comparing counts keeps the order exact; equal counts keep BTreeMap order.
        ranked.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
        ranked
            .into_iter()
            .map(|(r, c)| (r.clone(), c as f64 / total as f64))
            .filter(|(_, p)| *p >= self.tau_p)
            .take(self.top_k_prefetch)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let mut m = AccessModel::default();
        m.observe_access("A", "B");
        assert_eq!(m.count("A", "B"), 1);
        assert_eq!(m.predict_prefetch("A"), vec![("B".to_string(), 1.0)]);
        m.observe_access("A", "B");
        m.observe_access("A", "C");
        assert_eq!(m.count("A", "B"), 2);
        assert_eq!(m.count("A", "C"), 1);
        assert_eq!(m.total(), 3);
        let p = m.predict_prefetch("A");
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].0, "B");
        assert!((p[0].1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(m.predict_prefetch("Z").is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(AccessModel::new(0.0, 2).is_err());
        assert!(AccessModel::new(0.5, 0).is_err());
    }
}
