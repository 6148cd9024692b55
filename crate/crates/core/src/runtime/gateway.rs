//! The data-access layer agents talk to.
//!
//! Every request is tried against the agent's micro cache, then the
//! federation's shared cache, then joined onto an identical request already in
//! flight, and only then sent to a backend. Backend results are computed when
//! issued but enter caches only once their completion tick has passed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::agents::AgentId;
use super::config::{CacheConfig, Feature, FeatureSet, Thresholds};
use super::RuntimeError;
use crate::cache::{
    detect_overlap, suppress_probe_with, CacheEntry, CacheScope, InflightProbe, RetentionPolicy, SemanticCache,
    SuppressionDecision,
};
use crate::clock::Tick;
use crate::embedding::{cosine, Embedding};
use crate::fabric::ir::{NodeKind, OpKind, PlanNode};
use crate::fabric::monitor::{KPIRecord, KpiLog, KpiSink};
use crate::fabric::{ExecContext, Fabric};
use crate::orchestration::{ProbeBackend, ProbeOutcome, RouteError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedFrom {
    Backend,
    MicroCache,
    SharedCache,
    InFlight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Served {
    pub payload: Json,
    /// Tick at which the requester may use the payload.
    pub ready_at: Tick,
    pub from: ServedFrom,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub backend_queries: u64,
    pub probes: u64,
    pub suppressed_probes: u64,
    pub micro_lookups: u64,
    pub micro_hits: u64,
    pub shared_lookups: u64,
    pub shared_hits: u64,
    pub coalesced: u64,
    pub prefetched: u64,
    pub usd: f64,
}

#[derive(Debug, Clone)]
struct Pending {
    id: String,
    owner: AgentId,
    prefetch: bool,
    tag: String,
    key: Embedding,
    source: String,
    payload: Json,
    ready_at: Tick,
}

/// Lookup key for a node: an embedding plus a tag that must match exactly.
/// Scans and aggregates put their full canonical text in the tag, so only an
/// identical node can reuse them.
pub fn cache_key(fabric: &Fabric, node: &PlanNode) -> (Embedding, String) {
    match &node.kind {
        NodeKind::VectorSearch { source, query_text, k, .. } => {
            (fabric.embed(query_text), format!("vector_search|{source}|{k}"))
        }
        NodeKind::Infer { source, model_id, input } => (fabric.embed(input), format!("infer|{source}|{model_id}")),
        NodeKind::MetaProbe { source, .. } => (fabric.embed(&node.canonical()), format!("meta_probe|{source}")),
        _ => {
            let canonical = node.canonical();
            (fabric.embed(&canonical), canonical)
        }
    }
}

/// 1 when a metadata probe matched anything, else 0.
pub fn probe_usefulness(payload: &Json) -> f64 {
    let non_empty = |k: &str| payload.get(k).and_then(Json::as_array).is_some_and(|a| !a.is_empty());
    if non_empty("tables") || non_empty("names") {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct Gateway {
    fabric: Fabric,
    seed: u64,
    features: FeatureSet,
    thresholds: Thresholds,
    promote_min: u64,
    micro: BTreeMap<AgentId, SemanticCache>,
    shared: Vec<SemanticCache>,
    federation_of: BTreeMap<AgentId, usize>,
    pending: Vec<Pending>,
    next_request: u64,
    tasks: BTreeMap<AgentId, Embedding>,
    linked: BTreeSet<AgentId>,
    stats: GatewayStats,
    kpis: KpiLog,
    fresh: Vec<(Tick, KPIRecord)>,
}

impl Gateway {
    pub fn new(
        fabric: Fabric,
        seed: u64,
        features: FeatureSet,
        thresholds: Thresholds,
        caches: CacheConfig,
        half_life: f64,
        federations: &[Vec<AgentId>],
    ) -> Result<Self, RuntimeError> {
        let retention = RetentionPolicy { beta: caches.beta, half_life };
        let dim = fabric.dim();
        let micro = AgentId::ALL
            .into_iter()
            .map(|a| {
                SemanticCache::new(CacheScope::Micro(a.to_string()), caches.micro_capacity, thresholds.tau_c, retention, dim)
                    .map(|c| (a, c))
            })
            .collect::<Result<_, _>>()?;
        let mut shared = Vec::new();
        let mut federation_of = BTreeMap::new();
        for (i, members) in federations.iter().enumerate() {
            shared.push(SemanticCache::new(
                CacheScope::Shared(format!("federation-{i}")),
                caches.shared_capacity,
                thresholds.tau_c,
                retention,
                dim,
            )?);
            for m in members {
                federation_of.insert(*m, i);
            }
        }
        Ok(Gateway {
            fabric,
            seed,
            features,
            thresholds,
            promote_min: caches.promote_min,
            micro,
            shared,
            federation_of,
            pending: Vec::new(),
            next_request: 0,
            tasks: BTreeMap::new(),
            linked: BTreeSet::new(),
            stats: GatewayStats::default(),
            kpis: KpiLog::default(),
            fresh: Vec::new(),
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn kpis(&self) -> &KpiLog {
        &self.kpis
    }

    /// KPI records emitted since the last call, each with the tick at which
    /// the operation it describes completed.
    pub fn take_fresh_kpis(&mut self) -> Vec<(Tick, KPIRecord)> {
        std::mem::take(&mut self.fresh)
    }

    pub fn micro_cache(&self, agent: AgentId) -> &SemanticCache {
        &self.micro[&agent]
    }

    pub fn shared_cache(&self, agent: AgentId) -> Option<&SemanticCache> {
        self.federation_of.get(&agent).map(|&i| &self.shared[i])
    }

    fn on(&self, f: Feature) -> bool {
        self.features.has(f)
    }

    fn shared_enabled_for(&self, agent: AgentId) -> Option<usize> {
        if self.on(Feature::SharedCache) {
            self.federation_of.get(&agent).copied()
        } else {
            None
        }
    }

    pub fn set_half_life(&mut self, half_life: f64) -> Result<(), RuntimeError> {
        for c in self.micro.values_mut().chain(self.shared.iter_mut()) {
            c.set_half_life(half_life)?;
        }
        Ok(())
    }

    /// Starts tracking an agent's task. Agents whose active tasks overlap are
    /// linked: their micro caches are merged into the shared cache and their
    /// later results are written through to it.
    pub fn register_task(&mut self, agent: AgentId, task: &Embedding, now: Tick) -> Result<usize, RuntimeError> {
        if self.shared_enabled_for(agent).is_none() {
            return Ok(0);
        }
        self.tasks.insert(agent, task.clone());
        let active: Vec<(String, Embedding)> =
            self.tasks.iter().map(|(a, e)| (a.as_str().to_string(), e.clone())).collect();
        let mut newly = 0;
        for (a, b, _) in detect_overlap(&active, self.thresholds.tau_o)? {
            for name in [a, b] {
                let id = AgentId::ALL.into_iter().find(|x| x.as_str() == name).expect("registered agent");
                if self.federation_of.get(&id) != self.federation_of.get(&agent) || !self.linked.insert(id) {
                    continue;
                }
                newly += 1;
                if self.on(Feature::MicroCache) {
                    let fed = self.federation_of[&id];
                    self.micro[&id].merge_into(&mut self.shared[fed], now)?;
                }
            }
        }
        Ok(newly)
    }

    pub fn finish_task(&mut self, agent: AgentId) {
        self.tasks.remove(&agent);
    }

    pub fn is_linked(&self, agent: AgentId) -> bool {
        self.linked.contains(&agent)
    }

    /// Moves every result completed by `now` into the caches it belongs in.
    pub fn materialize(&mut self, now: Tick) -> Result<(), RuntimeError> {
        let (mut done, rest): (Vec<Pending>, Vec<Pending>) = self.pending.drain(..).partition(|p| p.ready_at <= now);
        self.pending = rest;
        done.sort_by(|a, b| (a.ready_at, &a.id).cmp(&(b.ready_at, &b.id)));
        for p in done {
            let provenance = [p.source.clone()];
            if self.on(Feature::MicroCache) && !p.prefetch {
                let cache = self.micro.get_mut(&p.owner).expect("micro cache per agent");
                let id = cache.allocate_id();
                let entry = CacheEntry::new(id, p.key.clone(), p.payload.clone(), p.tag.clone(), p.owner.as_str(), p.ready_at)
                    .with_provenance(provenance.clone());
                cache.insert(entry, p.ready_at)?;
            }
            if let Some(fed) = self.shared_enabled_for(p.owner) {
                if p.prefetch || self.linked.contains(&p.owner) {
                    let shared = &mut self.shared[fed];
                    let twin = shared.peek_with(&p.key, 1.0 - 1e-12, |e| e.modality_tag == p.tag)?.is_some();
                    if !twin {
                        let id = shared.allocate_id();
                        let entry =
                            CacheEntry::new(id, p.key, p.payload, p.tag, p.owner.as_str(), p.ready_at).with_provenance(provenance);
                        shared.insert(entry, p.ready_at)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn joinable(&self, agent: AgentId, key: &Embedding, tag: &str, now: Tick) -> Result<Option<usize>, RuntimeError> {
        let shared_fed = self.shared_enabled_for(agent);
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.pending.iter().enumerate() {
            if p.tag != tag || p.ready_at <= now {
                continue;
            }
            let same_federation = shared_fed.is_some() && self.federation_of.get(&p.owner).copied() == shared_fed;
            let own = self.on(Feature::MicroCache) && p.owner == agent && !p.prefetch;
            if !(same_federation || own) {
                continue;
            }
            let sim = cosine(key, &p.key)?;
            if sim >= self.thresholds.tau_c && best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        Ok(best.map(|(i, _)| i))
    }

    fn cache_hit_kpi(&mut self, agent: AgentId, node: &PlanNode, now: Tick) -> Result<(), RuntimeError> {
        let engine = self.fabric.compile(node)?.engine_id;
        let kpi = KPIRecord::cache_hit(agent.as_str(), engine, node.op_kind(), now);
        self.kpis.record_kpi(&kpi);
        self.fresh.push((now, kpi));
        Ok(())
    }

    /// Serves one request through the cache hierarchy.
    pub fn request(&mut self, agent: AgentId, node: &PlanNode, now: Tick) -> Result<Served, RuntimeError> {
        self.materialize(now)?;
        let (key, tag) = cache_key(&self.fabric, node);
        let is_probe = node.op_kind() == OpKind::MetaProbe;
        if is_probe {
            self.stats.probes += 1;
        }
        let tau_c = self.thresholds.tau_c;
        let mut served = None;
        if self.on(Feature::MicroCache) {
            self.stats.micro_lookups += 1;
            let micro = self.micro.get_mut(&agent).expect("micro cache per agent");
            if let Some(hit) = micro.lookup_with(&key, tau_c, now, |e| e.modality_tag == tag)? {
                self.stats.micro_hits += 1;
                if let Some(fed) = self.shared_enabled_for(agent) {
                    self.micro[&agent].promote_into(&mut self.shared[fed], self.promote_min, now)?;
                }
                served = Some(Served { payload: hit.entry.payload, ready_at: now, from: ServedFrom::MicroCache });
            }
        }
        if served.is_none() {
            if let Some(fed) = self.shared_enabled_for(agent) {
                self.stats.shared_lookups += 1;
                if let Some(hit) = self.shared[fed].lookup_with(&key, tau_c, now, |e| e.modality_tag == tag)? {
                    self.stats.shared_hits += 1;
                    if self.on(Feature::MicroCache) {
                        let micro = self.micro.get_mut(&agent).expect("micro cache per agent");
                        let mut copy = hit.entry.clone();
                        copy.entry_id = micro.allocate_id();
                        copy.reuse_count = 0;
                        micro.insert(copy, now)?;
                    }
                    served = Some(Served { payload: hit.entry.payload, ready_at: now, from: ServedFrom::SharedCache });
                }
            }
        }
        if served.is_none() {
            if let Some(i) = self.joinable(agent, &key, &tag, now)? {
                self.stats.coalesced += 1;
                let p = &self.pending[i];
                served = Some(Served { payload: p.payload.clone(), ready_at: p.ready_at, from: ServedFrom::InFlight });
            }
        }
        if let Some(s) = served {
            if is_probe {
                self.stats.suppressed_probes += 1;
            }
            self.cache_hit_kpi(agent, node, now)?;
            return Ok(s);
        }
        let (payload, ready_at, _) = self.execute(agent, node, key, tag, false, now)?;
        Ok(Served { payload, ready_at, from: ServedFrom::Backend })
    }

    /// Issues `node` ahead of demand unless it is already cached or in flight.
    /// The result is written to the agent's shared cache. Returns whether a
    /// backend query was issued.
    pub fn prefetch(&mut self, agent: AgentId, node: &PlanNode, now: Tick) -> Result<bool, RuntimeError> {
        let Some(fed) = self.shared_enabled_for(agent) else { return Ok(false) };
        self.materialize(now)?;
        let (key, tag) = cache_key(&self.fabric, node);
        let tau_c = self.thresholds.tau_c;
        let cached = self.shared[fed].peek_with(&key, tau_c, |e| e.modality_tag == tag)?.is_some()
            || self.micro[&agent].peek_with(&key, tau_c, |e| e.modality_tag == tag)?.is_some();
        if cached || self.joinable(agent, &key, &tag, now)?.is_some() {
            return Ok(false);
        }
        self.execute(agent, node, key, tag, true, now)?;
        self.stats.prefetched += 1;
        Ok(true)
    }

    fn execute(
        &mut self,
        agent: AgentId,
        node: &PlanNode,
        key: Embedding,
        tag: String,
        prefetch: bool,
        now: Tick,
    ) -> Result<(Json, Tick, String), RuntimeError> {
        self.next_request += 1;
        let id = format!("req-{:06}", self.next_request);
        let ctx = ExecContext { query_id: &id, component: agent.as_str(), now, seed: self.seed };
        let exec = self.fabric.run(node, ctx)?;
        self.stats.backend_queries += 1;
        self.stats.usd += exec.kpi.usd;
        self.kpis.record_kpi(&exec.kpi);
        let ready_at = exec.completes_at();
        self.fresh.push((ready_at, exec.kpi));
        let payload = exec.result.payload;
        self.pending.push(Pending {
            id: id.clone(),
            owner: agent,
            prefetch,
            tag,
            key,
            source: exec.result.source_id,
            payload: payload.clone(),
            ready_at,
        });
        Ok((payload, ready_at, id))
    }

    /// Probe callbacks for the router, acting for `agent` at `now`.
    pub fn probe_backend(&mut self, agent: AgentId, now: Tick) -> GatewayProbes<'_> {
        GatewayProbes { gateway: self, agent, now }
    }
}

/// [`ProbeBackend`] over a gateway: probes are suppressed against the agent's
/// micro cache, then the shared cache and in-flight probes of its federation.
pub struct GatewayProbes<'a> {
    gateway: &'a mut Gateway,
    agent: AgentId,
    now: Tick,
}

fn route_err(e: RuntimeError) -> RouteError {
    match e {
        RuntimeError::Route(r) => r,
        RuntimeError::Fabric(f) => RouteError::Fabric(f),
        RuntimeError::Cache(c) => RouteError::Cache(c),
        other => RouteError::UnknownReference(other.to_string()),
    }
}

impl ProbeBackend for GatewayProbes<'_> {
    fn suppress(&mut self, probe: &PlanNode, embedding: &Embedding, source_id: &str) -> Result<SuppressionDecision, RouteError> {
        let gw = &mut *self.gateway;
        gw.materialize(self.now).map_err(route_err)?;
        gw.stats.probes += 1;
        let (_, tag) = cache_key(&gw.fabric, probe);
        let tau_s = gw.thresholds.tau_s;
        let mut verdict = SuppressionDecision::PassThrough;
        if gw.on(Feature::MicroCache) {
            gw.stats.micro_lookups += 1;
            let micro = gw.micro.get_mut(&self.agent).expect("micro cache per agent");
            if let Some(hit) = micro.lookup_with(embedding, tau_s, self.now, |e| e.modality_tag == tag)? {
                gw.stats.micro_hits += 1;
                verdict = SuppressionDecision::RedirectToEntry(hit.entry.entry_id);
            }
        }
        if verdict.is_pass_through() {
            if let Some(fed) = gw.shared_enabled_for(self.agent) {
                gw.stats.shared_lookups += 1;
                let inflight: Vec<InflightProbe> = gw
                    .pending
                    .iter()
                    .filter(|p| p.tag == tag && p.ready_at > self.now && gw.federation_of.get(&p.owner) == Some(&fed))
                    .map(|p| InflightProbe { probe_id: p.id.clone(), source_id: p.source.clone(), embedding: p.key.clone() })
                    .collect();
                verdict = suppress_probe_with(
                    embedding,
                    &mut gw.shared[fed],
                    &inflight,
                    tau_s,
                    |e| e.modality_tag == tag,
                    |p| p.source_id == source_id,
                    self.now,
                )?;
                if matches!(verdict, SuppressionDecision::RedirectToEntry(_)) {
                    gw.stats.shared_hits += 1;
                }
            }
        }
        if !verdict.is_pass_through() {
            gw.stats.suppressed_probes += 1;
            gw.cache_hit_kpi(self.agent, probe, self.now).map_err(route_err)?;
        }
        Ok(verdict)
    }

    fn execute_probe(&mut self, probe: &PlanNode, embedding: &Embedding) -> Result<ProbeOutcome, RouteError> {
        let (_, tag) = cache_key(&self.gateway.fabric, probe);
        let (payload, ready_at, _) =
            self.gateway.execute(self.agent, probe, embedding.clone(), tag, false, self.now).map_err(route_err)?;
        Ok(ProbeOutcome { usefulness: probe_usefulness(&payload), ready_at, payload })
    }

    fn redirected(&mut self, entry_id: &str) -> Result<ProbeOutcome, RouteError> {
        let gw = &self.gateway;
        let entry = gw
            .micro
            .values()
            .chain(gw.shared.iter())
            .find_map(|c| c.get(entry_id))
            .ok_or_else(|| RouteError::UnknownReference(entry_id.to_string()))?;
        Ok(ProbeOutcome { usefulness: probe_usefulness(&entry.payload), ready_at: self.now, payload: entry.payload.clone() })
    }

    fn delayed(&mut self, probe_id: &str) -> Result<ProbeOutcome, RouteError> {
        let p = self
            .gateway
            .pending
            .iter()
            .find(|p| p.id == probe_id)
            .ok_or_else(|| RouteError::UnknownReference(probe_id.to_string()))?;
        Ok(ProbeOutcome { usefulness: probe_usefulness(&p.payload), ready_at: p.ready_at, payload: p.payload.clone() })
    }
}
