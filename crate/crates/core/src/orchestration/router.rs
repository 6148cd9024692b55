//! Attention-guided routing: probe, prune, select, plan.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::optimizer::{CostModel, PolicyState};
use super::RouteError;
use crate::attention::{allocate_probes, compute_attention, update_attention, AttentionDistribution, Modality, SourceDescriptor};
use crate::cache::SuppressionDecision;
use crate::clock::Tick;
use crate::embedding::{embed_text_with_dim, tokenize, Embedding};
use crate::fabric::ir::{NodeKind, PlanNode};
use crate::quorum::QuorumExpectation;

/// A high-level request from an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIntent {
    pub intent_id: String,
    pub agent_id: String,
    pub text: String,
    pub embedding: Embedding,
    pub modality_needs: BTreeSet<Modality>,
    /// Term the metadata probes look for; defaults to the first token of `text`.
    pub probe_term: String,
    /// Full-retrieval node per source this intent knows how to query.
    pub retrievals: BTreeMap<String, PlanNode>,
}

impl QueryIntent {
    pub fn new(
        intent_id: impl Into<String>,
        agent_id: impl Into<String>,
        text: impl Into<String>,
        modality_needs: impl IntoIterator<Item = Modality>,
        dim: usize,
    ) -> Self {
        let text = text.into();
        QueryIntent {
            intent_id: intent_id.into(),
            agent_id: agent_id.into(),
            embedding: embed_text_with_dim(&text, dim),
            probe_term: tokenize(&text).into_iter().next().unwrap_or_default(),
            text,
            modality_needs: modality_needs.into_iter().collect(),
            retrievals: BTreeMap::new(),
        }
    }

    pub fn with_probe_term(mut self, term: impl Into<String>) -> Self {
        self.probe_term = term.into();
        self
    }

    pub fn with_retrieval(mut self, node: PlanNode) -> Self {
        if let Some(src) = node.source() {
            self.retrievals.insert(src.to_string(), node);
        }
        self
    }

    /// The metadata probe sent to `source_id`.
    pub fn probe_node(&self, source_id: &str) -> PlanNode {
        PlanNode::new(
            format!("{}/probe/{source_id}", self.intent_id),
            NodeKind::MetaProbe { source: source_id.to_string(), name_pattern: format!("%{}%", self.probe_term) },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub tau_a: f64,
    pub prune_factor: f64,
    pub usefulness_cutoff: f64,
    /// Probe and select by attention; otherwise retrieve from every templated source.
    pub attention: bool,
    /// Prune sources whose estimated latency is far above the median.
    pub pruning: bool,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig { tau_a: 0.1, prune_factor: 4.0, usefulness_cutoff: 0.5, attention: true, pruning: true }
    }
}

/// What became of one probe slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub usefulness: f64,
    pub ready_at: Tick,
    pub payload: serde_json::Value,
}

/// Executes or resolves probes on the router's behalf.
pub trait ProbeBackend {
    /// Suppression verdict for a probe against `source_id`.
    fn suppress(&mut self, probe: &PlanNode, embedding: &Embedding, source_id: &str) -> Result<SuppressionDecision, RouteError>;
    /// Runs a pass-through probe.
    fn execute_probe(&mut self, probe: &PlanNode, embedding: &Embedding) -> Result<ProbeOutcome, RouteError>;
    /// Reads the outcome recorded on a shared cache entry.
    fn redirected(&mut self, entry_id: &str) -> Result<ProbeOutcome, RouteError>;
    /// Waits for an in-flight probe.
    fn delayed(&mut self, probe_id: &str) -> Result<ProbeOutcome, RouteError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub source_id: String,
    pub priority: f64,
    pub verdict: SuppressionDecision,
    pub usefulness: f64,
    pub ready_at: Tick,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub intent_id: String,
    /// Attention after probe feedback; `None` when attention is disabled.
    pub attention: Option<AttentionDistribution>,
    pub probes: Vec<ProbeRecord>,
    /// Probe nodes actually sent to a backend.
    pub probe_nodes: Vec<PlanNode>,
    pub retrievals: Vec<PlanNode>,
    pub pruned: Vec<(String, String)>,
    pub expectation: QuorumExpectation,
    /// Earliest tick at which retrievals may be issued.
    pub ready_at: Tick,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Estimated latency of retrieving from `source`: the learned estimate for
/// the retrieval operator when there is one, else the advertised cost.
fn estimated_latency(source: &SourceDescriptor, intent: &QueryIntent, costs: &CostModel) -> f64 {
    intent
        .retrievals
        .get(&source.source_id)
        .and_then(|n| costs.estimate(&source.engine_id, n.op_kind()))
        .map_or(source.advertised_cost, |e| e.est_latency)
}

pub fn route(
    intent: &QueryIntent,
    sources: &[SourceDescriptor],
    policy: &PolicyState,
    costs: &CostModel,
    config: &RouterConfig,
    now: Tick,
    backend: &mut dyn ProbeBackend,
) -> Result<ExecutionPlan, RouteError> {
    if sources.is_empty() {
        return Err(RouteError::NoSources);
    }
    let mut pruned = Vec::new();
    let mut viable: Vec<SourceDescriptor> = sources.to_vec();
    if config.pruning {
        let mut estimates: Vec<f64> = sources.iter().map(|s| estimated_latency(s, intent, costs)).collect();
        let cutoff = config.prune_factor * median(&mut estimates);
        viable.retain(|s| {
            let est = estimated_latency(s, intent, costs);
            let keep = est <= cutoff;
            if !keep {
                pruned.push((s.source_id.clone(), format!("estimated latency {est:.1} exceeds {cutoff:.1}")));
            }
            keep
        });
    }
    if viable.is_empty() {
        return Err(RouteError::NoViableSources);
    }

    let mut probes = Vec::new();
    let mut probe_nodes = Vec::new();
    let mut attention = None;
    let mut ready_at = now;
    let selected: Vec<&SourceDescriptor> = if config.attention {
        let dist = compute_attention(&intent.embedding, &viable, config.tau_a)?;
        let mut feedback = Vec::new();
        for (source_id, priority) in allocate_probes(&dist, policy.k)? {
            let node = intent.probe_node(&source_id);
            let embedding = embed_text_with_dim(&node.canonical(), intent.embedding.dim());
            let verdict = backend.suppress(&node, &embedding, &source_id)?;
            let outcome = match &verdict {
                SuppressionDecision::PassThrough => {
                    let o = backend.execute_probe(&node, &embedding)?;
                    probe_nodes.push(node);
                    o
                }
                SuppressionDecision::RedirectToEntry(id) => backend.redirected(id)?,
                SuppressionDecision::DelayUntil(id) => backend.delayed(id)?,
            };
            ready_at = ready_at.max(outcome.ready_at);
            feedback.push((source_id.clone(), outcome.usefulness));
            probes.push(ProbeRecord {
                source_id,
                priority,
                verdict,
                usefulness: outcome.usefulness,
                ready_at: outcome.ready_at,
                payload: outcome.payload,
            });
        }
        let sharpened = update_attention(&dist, &feedback)?;
        let useful: BTreeSet<&str> = probes
            .iter()
            .filter(|p| p.usefulness >= config.usefulness_cutoff)
            .map(|p| p.source_id.as_str())
            .collect();
        let mut chosen: Vec<&SourceDescriptor> = viable
            .iter()
            .filter(|s| {
                useful.contains(s.source_id.as_str())
                    || dist.weight(&s.source_id).unwrap_or(0.0) >= config.usefulness_cutoff
            })
            .filter(|s| intent.retrievals.contains_key(&s.source_id))
            .collect();
        if chosen.is_empty() {
            // Nothing cleared the bar: fall back to the best templated source.
            let mut ranked = sharpened.weights.clone();
            ranked.sort_by(crate::attention::by_weight_then_id);
            chosen.extend(
                ranked
                    .iter()
                    .find(|(id, _)| intent.retrievals.contains_key(id))
                    .and_then(|(id, _)| viable.iter().find(|s| &s.source_id == id)),
            );
        }
        attention = Some(sharpened);
        chosen
    } else {
        viable.iter().filter(|s| intent.retrievals.contains_key(&s.source_id)).collect()
    };
    if selected.is_empty() {
        return Err(RouteError::NoViableSources);
    }

    let retrievals: Vec<PlanNode> = selected.iter().map(|s| intent.retrievals[&s.source_id].clone()).collect();
    let expectation = QuorumExpectation::new(
        intent.intent_id.clone(),
        selected.iter().map(|s| (s.source_id.clone(), s.modality)),
        policy.theta_q,
    )?;
    Ok(ExecutionPlan {
        intent_id: intent.intent_id.clone(),
        attention,
        probes,
        probe_nodes,
        retrievals,
        pruned,
        expectation,
        ready_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{suppress_probe, CacheScope, InflightProbe, RetentionPolicy, SemanticCache};
    use crate::embedding::{embed_text, DEFAULT_DIM};
    use crate::fabric::ir::Predicate;

    /// Probes complete 10 ticks after issue and are always useful.
    struct Scripted {
        now: Tick,
        shared: SemanticCache,
        inflight: Vec<(InflightProbe, ProbeOutcome)>,
        executed: usize,
    }

    impl Scripted {
        fn new() -> Self {
            Scripted {
                now: 0,
                shared: SemanticCache::new(CacheScope::Shared("fed".into()), 16, 0.9, RetentionPolicy::default(), DEFAULT_DIM)
                    .unwrap(),
                inflight: Vec::new(),
                executed: 0,
            }
        }
    }

    impl ProbeBackend for Scripted {
        fn suppress(&mut self, _: &PlanNode, e: &Embedding, source_id: &str) -> Result<SuppressionDecision, RouteError> {
            let live: Vec<InflightProbe> = self.inflight.iter().map(|(p, _)| p.clone()).collect();
            Ok(suppress_probe(e, &mut self.shared, &live, 0.85, Some(source_id), self.now)?)
        }
        fn execute_probe(&mut self, node: &PlanNode, e: &Embedding) -> Result<ProbeOutcome, RouteError> {
            self.executed += 1;
            let o = ProbeOutcome { usefulness: 1.0, ready_at: self.now + 10, payload: serde_json::json!({ "probe": node.node_id }) };
            let probe = InflightProbe { probe_id: node.node_id.clone(), source_id: node.source().unwrap().into(), embedding: e.clone() };
            self.inflight.push((probe, o.clone()));
            Ok(o)
        }
        fn redirected(&mut self, id: &str) -> Result<ProbeOutcome, RouteError> {
            Err(RouteError::UnknownReference(id.into()))
        }
        fn delayed(&mut self, id: &str) -> Result<ProbeOutcome, RouteError> {
            self.inflight
                .iter()
                .find(|(p, _)| p.probe_id == id)
                .map(|(_, o)| o.clone())
                .ok_or_else(|| RouteError::UnknownReference(id.into()))
        }
    }

    fn source(id: &str, text: &str, cost: f64) -> SourceDescriptor {
        SourceDescriptor {
            source_id: id.into(),
            modality: Modality::Relational,
            engine_id: format!("{id}-engine"),
            summary_embedding: embed_text(text),
            advertised_cost: cost,
        }
    }

    fn scan(id: &str) -> PlanNode {
        PlanNode::new(
            format!("scan-{id}"),
            NodeKind::Scan { source: id.into(), table: "t".into(), predicate: Predicate::all(), limit: None },
        )
    }

    fn intent(id: &str, agent: &str, sources: &[&str]) -> QueryIntent {
        sources.iter().fold(
            QueryIntent::new(id, agent, "delivery delays by region", [Modality::Relational], DEFAULT_DIM),
            |i, s| i.with_retrieval(scan(s)),
        )
    }

    #[test]
    fn single_source_gets_one_probe_and_one_retrieval() {
        let mut b = Scripted::new();
        let plan = route(
            &intent("q1", "a", &["db"]),
            &[source("db", "shipments delivery", 10.0)],
            &PolicyState::default(),
            &CostModel::default(),
            &RouterConfig::default(),
            0,
            &mut b,
        )
        .unwrap();
        assert_eq!(plan.probe_nodes.len(), 1);
        assert_eq!(plan.retrievals.len(), 1);
        assert_eq!(plan.expectation.expected_sources.len(), 1);
        assert_eq!(plan.ready_at, 10);
    }

    #[test]
    fn identical_intents_share_one_probe() {
        let mut b = Scripted::new();
        let sources = [source("db", "shipments delivery", 10.0)];
        let run = |b: &mut Scripted, id: &str, agent: &str| {
            route(&intent(id, agent, &["db"]), &sources, &PolicyState::default(), &CostModel::default(), &RouterConfig::default(), 0, b)
                .unwrap()
        };
        let first = run(&mut b, "q1", "a");
        let second = run(&mut b, "q2", "b");
        assert_eq!(first.probe_nodes.len(), 1);
        assert!(second.probe_nodes.is_empty());
        assert!(matches!(second.probes[0].verdict, SuppressionDecision::DelayUntil(_)));
        assert_eq!(b.executed, 1);
    }

    #[test]
    fn slow_source_is_pruned() {
        let mut b = Scripted::new();
        let sources = [
            source("a", "delivery", 10.0),
            source("b", "delivery", 10.0),
            source("c", "delivery", 10.0),
            source("slow", "delivery", 100.0),
        ];
        let config = RouterConfig { attention: false, ..Default::default() };
        let plan = route(
            &intent("q", "x", &["a", "b", "c", "slow"]),
            &sources,
            &PolicyState::default(),
            &CostModel::default(),
            &config,
            0,
            &mut b,
        )
        .unwrap();
        assert_eq!(plan.pruned.len(), 1);
        assert_eq!(plan.pruned[0].0, "slow");
        assert_eq!(plan.retrievals.len(), 3);
    }

    #[test]
    fn no_sources_or_no_retrievals_is_an_error() {
        let mut b = Scripted::new();
        let err = route(&intent("q", "x", &[]), &[], &PolicyState::default(), &CostModel::default(), &RouterConfig::default(), 0, &mut b)
            .unwrap_err();
        assert_eq!(err, RouteError::NoSources);
        let plan = route(
            &intent("q", "x", &[]),
            &[source("db", "x", 1.0)],
            &PolicyState::default(),
            &CostModel::default(),
            &RouterConfig::default(),
            0,
            &mut b,
        );
        assert_eq!(plan.unwrap_err(), RouteError::NoViableSources);
    }

    #[test]
    fn routing_is_deterministic() {
        let sources = [source("a", "delivery delays", 10.0), source("b", "weather", 12.0), source("c", "customs", 9.0)];
        let mk = || {
            let mut b = Scripted::new();
            route(
                &intent("q", "x", &["a", "b", "c"]),
                &sources,
                &PolicyState::default(),
                &CostModel::default(),
                &RouterConfig::default(),
                0,
                &mut b,
            )
            .unwrap()
        };
        assert_eq!(mk(), mk());
        assert!(mk().probes.iter().all(|p| p.verdict.is_pass_through()));
    }
}
