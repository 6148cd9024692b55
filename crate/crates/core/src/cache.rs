//! Embedding-keyed micro and shared caches, cross-agent overlap detection and
//! duplicate probe suppression.
//!
//! Retention follows a decayed LFU score
//! `(reuse_count + beta * attention_freq) * 2^(-(now - last_hit_at) / half_life)`;
//! the lowest score is evicted first, ties going to the smaller entry id.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Tick;
use crate::embedding::{cosine, DimensionMismatch, Embedding};

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("cache capacity must be positive")]
    ZeroCapacity,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("half-life must be positive, got {0}")]
    InvalidHalfLife(f64),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheScope {
    Micro(String),
    Shared(String),
}

impl fmt::Display for CacheScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CacheScope::Micro(agent) => write!(f, "micro:{agent}"),
            CacheScope::Shared(federation) => write!(f, "shared:{federation}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub entry_id: String,
    pub key_embedding: Embedding,
    /// Opaque to the cache.
    pub payload: serde_json::Value,
    pub modality_tag: String,
    pub producer_agent: String,
    pub created_at: Tick,
    pub last_hit_at: Tick,
    pub reuse_count: u64,
    pub attention_freq: f64,
    pub provenance: Vec<String>,
}

impl CacheEntry {
    pub fn new(
        entry_id: impl Into<String>,
        key_embedding: Embedding,
        payload: serde_json::Value,
        modality_tag: impl Into<String>,
        producer_agent: impl Into<String>,
        now: Tick,
    ) -> Self {
        CacheEntry {
            entry_id: entry_id.into(),
            key_embedding,
            payload,
            modality_tag: modality_tag.into(),
            producer_agent: producer_agent.into(),
            created_at: now,
            last_hit_at: now,
            reuse_count: 0,
            attention_freq: 0.0,
            provenance: Vec::new(),
        }
    }

    pub fn with_provenance(mut self, sources: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.provenance = sources.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    pub beta: f64,
    pub half_life: f64,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        RetentionPolicy { beta: 1.0, half_life: 100.0 }
    }
}

impl RetentionPolicy {
    pub fn score(&self, entry: &CacheEntry, now: Tick) -> f64 {
        let age = now.saturating_sub(entry.last_hit_at) as f64;
        (entry.reuse_count as f64 + self.beta * entry.attention_freq)
            * (-age / self.half_life).exp2()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit {
    pub entry: CacheEntry,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticCache {
    scope: CacheScope,
    capacity: usize,
    tau_c: f64,
    retention: RetentionPolicy,
    dim: usize,
    entries: BTreeMap<String, CacheEntry>,
    next_id: u64,
}

fn check_threshold(t: f64) -> Result<f64, CacheError> {
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(CacheError::InvalidThreshold(t))
    }
}

impl SemanticCache {
    pub fn new(
        scope: CacheScope,
        capacity: usize,
        tau_c: f64,
        retention: RetentionPolicy,
        dim: usize,
    ) -> Result<Self, CacheError> {
        if capacity == 0 {
            return Err(CacheError::ZeroCapacity);
        }
        if !(retention.half_life > 0.0) {
            return Err(CacheError::InvalidHalfLife(retention.half_life));
        }
        Ok(SemanticCache {
            scope,
            capacity,
            tau_c: check_threshold(tau_c)?,
            retention,
            dim,
            entries: BTreeMap::new(),
            next_id: 0,
        })
    }

    pub fn scope(&self) -> &CacheScope {
        &self.scope
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    pub fn get(&self, entry_id: &str) -> Option<&CacheEntry> {
        self.entries.get(entry_id)
    }

    pub fn retention(&self) -> RetentionPolicy {
        self.retention
    }

    pub fn set_half_life(&mut self, half_life: f64) -> Result<(), CacheError> {
        if !(half_life > 0.0) {
            return Err(CacheError::InvalidHalfLife(half_life));
        }
        self.retention.half_life = half_life;
        Ok(())
    }

    /// Fresh entry id, unique within this cache.
    pub fn allocate_id(&mut self) -> String {
        self.next_id += 1;
        format!("{}#{:06}", self.scope, self.next_id)
    }

    /// Best match at or above `threshold` among entries accepted by `filter`,
    /// without touching the cache.
    pub fn peek_with<F>(
        &self,
        query: &Embedding,
        threshold: f64,
        filter: F,
    ) -> Result<Option<(&CacheEntry, f64)>, CacheError>
    where
        F: Fn(&CacheEntry) -> bool,
    {
        if query.dim() != self.dim {
            return Err(DimensionMismatch { left: self.dim, right: query.dim() }.into());
        }
        let mut best: Option<(&CacheEntry, f64)> = None;
        for entry in self.entries.values().filter(|e| filter(e)) {
            let sim = cosine(query, &entry.key_embedding)?;
            if sim < threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((cur, cur_sim)) => match sim.partial_cmp(&cur_sim).unwrap_or(Ordering::Equal) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    // most recently hit wins, then the smaller id (BTreeMap order
                    // means `cur` already has the smaller id)
                    Ordering::Equal => entry.last_hit_at > cur.last_hit_at,
                },
            };
            if better {
                best = Some((entry, sim));
            }
        }
        Ok(best)
    }

    /// Threshold lookup at `tau_c`; records the hit.
    pub fn lookup(&mut self, query: &Embedding, now: Tick) -> Result<Option<CacheHit>, CacheError> {
        let tau = self.tau_c;
        self.lookup_with(query, tau, now, |_| true)
    }

    pub fn lookup_with<F>(
        &mut self,
        query: &Embedding,
        threshold: f64,
        now: Tick,
        filter: F,
    ) -> Result<Option<CacheHit>, CacheError>
    where
        F: Fn(&CacheEntry) -> bool,
    {
        let found = self
            .peek_with(query, threshold, filter)?
            .map(|(e, sim)| (e.entry_id.clone(), sim));
        Ok(found.map(|(id, similarity)| {
            let entry = self.entries.get_mut(&id).expect("peeked entry exists");
            entry.reuse_count += 1;
            entry.last_hit_at = entry.last_hit_at.max(now);
            CacheHit { entry: entry.clone(), similarity }
        }))
    }

    /// Adds `weight` to an entry's decayed attention counter.
    pub fn touch_attention(&mut self, entry_id: &str, weight: f64, now: Tick) {
        let half_life = self.retention.half_life;
        if let Some(e) = self.entries.get_mut(entry_id) {
            let age = now.saturating_sub(e.last_hit_at) as f64;
            e.attention_freq = e.attention_freq * (-age / half_life).exp2() + weight.max(0.0);
        }
    }

    /// Inserts `entry` and evicts lowest-retention entries until within capacity.
    pub fn insert(&mut self, entry: CacheEntry, now: Tick) -> Result<Vec<CacheEntry>, CacheError> {
        if entry.key_embedding.dim() != self.dim {
            return Err(DimensionMismatch { left: self.dim, right: entry.key_embedding.dim() }.into());
        }
        self.entries.insert(entry.entry_id.clone(), entry);
        let mut evicted = Vec::new();
        while self.entries.len() > self.capacity {
            let victim = self
                .entries
                .values()
                .map(|e| (self.retention.score(e, now), &e.entry_id))
                .min_by(|a, b| {
                    a.0.partial_cmp(&b.0)
                        .unwrap_or(Ordering::Equal)
                        .then_with(|| a.1.cmp(b.1))
                })
                .map(|(_, id)| id.clone())
                .expect("over capacity implies non-empty");
            evicted.extend(self.entries.remove(&victim));
        }
        Ok(evicted)
    }

    /// Copies every entry with `reuse_count >= promote_min` that has no exact
    /// key twin in `shared`. Returns the new shared entry ids.
    pub fn promote_into(
        &self,
        shared: &mut SemanticCache,
        promote_min: u64,
        now: Tick,
    ) -> Result<Vec<String>, CacheError> {
        self.copy_into(shared, now, |e| e.reuse_count >= promote_min)
    }

    /// Copies all entries lacking an exact key twin in `shared`.
    pub fn merge_into(&self, shared: &mut SemanticCache, now: Tick) -> Result<Vec<String>, CacheError> {
        self.copy_into(shared, now, |_| true)
    }

    fn copy_into<F>(&self, shared: &mut SemanticCache, now: Tick, pick: F) -> Result<Vec<String>, CacheError>
    where
        F: Fn(&CacheEntry) -> bool,
    {
        let mut added = Vec::new();
        for e in self.entries.values().filter(|e| pick(e)) {
            let twin = shared
                .peek_with(&e.key_embedding, 1.0 - 1e-12, |s| s.modality_tag == e.modality_tag)?
                .is_some();
            if twin {
                continue;
            }
            let mut copy = e.clone();
            copy.entry_id = shared.allocate_id();
            let id = copy.entry_id.clone();
            let evicted = shared.insert(copy, now)?;
            if !evicted.iter().any(|x| x.entry_id == id) {
                added.push(id);
            }
        }
        Ok(added)
    }

    /// One line per entry: `entry_id scope reuse_count attention_freq created_at provenance`,
    /// tab separated, provenance joined with `;`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}\t{}",
                e.entry_id,
                self.scope,
                e.reuse_count,
                e.attention_freq,
                e.created_at,
                e.provenance.join(";")
            );
        }
        out
    }
}

/// Unordered agent pairs whose task embeddings have cosine `>= tau_o`, sorted
/// by similarity descending, then by the pair.
pub fn detect_overlap(
    active_tasks: &[(String, Embedding)],
    tau_o: f64,
) -> Result<Vec<(String, String, f64)>, CacheError> {
    check_threshold(tau_o)?;
    let mut pairs = crate::parallel::pairwise_overlap(active_tasks, tau_o)?;
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (&a.0, &a.1).cmp(&(&b.0, &b.1)))
    });
    Ok(pairs)
}

/// A probe currently executing on some backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflightProbe {
    pub probe_id: String,
    pub source_id: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict", content = "target")]
pub enum SuppressionDecision {
    PassThrough,
    RedirectToEntry(String),
    DelayUntil(String),
}

impl SuppressionDecision {
    pub fn is_pass_through(&self) -> bool {
        matches!(self, SuppressionDecision::PassThrough)
    }
}

/// Redirect to a shared entry if one matches at `tau_s`, else delay behind the
/// most similar in-flight probe at `tau_s`, else pass through.
///
/// With `scope = Some(source)`, only entries whose provenance names `source`
/// and in-flight probes against `source` are considered.
pub fn suppress_probe(
    probe: &Embedding,
    shared: &mut SemanticCache,
    inflight: &[InflightProbe],
    tau_s: f64,
    scope: Option<&str>,
    now: Tick,
) -> Result<SuppressionDecision, CacheError> {
    suppress_probe_with(
        probe,
        shared,
        inflight,
        tau_s,
        |e| scope.is_none_or(|s| e.provenance.iter().any(|p| p == s)),
        |p| scope.is_none_or(|s| p.source_id == s),
        now,
    )
}

/// [`suppress_probe`] with explicit candidate filters.
pub fn suppress_probe_with<E, P>(
    probe: &Embedding,
    shared: &mut SemanticCache,
    inflight: &[InflightProbe],
    tau_s: f64,
    entry_filter: E,
    inflight_filter: P,
    now: Tick,
) -> Result<SuppressionDecision, CacheError>
where
    E: Fn(&CacheEntry) -> bool,
    P: Fn(&InflightProbe) -> bool,
{
    check_threshold(tau_s)?;
    if let Some(hit) = shared.lookup_with(probe, tau_s, now, entry_filter)? {
        return Ok(SuppressionDecision::RedirectToEntry(hit.entry.entry_id));
    }
    let mut best: Option<(&InflightProbe, f64)> = None;
    for p in inflight.iter().filter(|p| inflight_filter(p)) {
        let sim = cosine(probe, &p.embedding)?;
        if sim < tau_s {
            continue;
        }
        let better = match best {
            None => true,
            Some((cur, cur_sim)) => sim > cur_sim || (sim == cur_sim && p.probe_id < cur.probe_id),
        };
        if better {
            best = Some((p, sim));
        }
    }
    Ok(match best {
        Some((p, _)) => SuppressionDecision::DelayUntil(p.probe_id.clone()),
        None => SuppressionDecision::PassThrough,
    })
}
