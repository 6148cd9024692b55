//! The logistics scenario as a discrete-event simulation.
//!
//! Events are ordered by `(tick, sequence)`. Backend results are computed when
//! a request is issued, and the issuing agent resumes at the tick the result
//! becomes available.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::agents::{standard_agents, topics, validate_agents, Action, AgentId, AgentSpec};
use super::bus::{BusMessage, MessageBus};
use super::config::{Feature, FeatureSet, ScenarioConfig};
use super::gateway::Gateway;
use super::probe::{delay_aggregate, hypothesis_stage, matched_tables, probe_stage, sample_stage};
use super::report::{round6, ScenarioReport};
use super::RuntimeError;
use crate::attention::Modality;
use crate::clock::Tick;
use crate::fabric::ir::{AggFn, CmpOp, FieldExpr, NodeKind, PlanNode, Predicate};
use crate::fabric::monitor::{KPIRecord, KpiLog};
use crate::fabric::relational::CatalogMatch;
use crate::fabric::{Fabric, SourceData};
use crate::orchestration::{route, tune_policies, AccessModel, CostModel, ExecutionPlan, PolicyState, QueryIntent, RouterConfig};
use crate::quorum::{PartialResult, QuorumConfig, QuorumExpectation, QuorumState, ServeOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Kickoff,
    Sample,
    Hypothesize,
    Assess,
    Correlate,
    Announce,
    Classify,
    Summarize,
    Retrieve,
    FeedbackDocs,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver(AgentId),
    Step(AgentId, Stage),
    Part(AgentId, String),
    Kpi(KPIRecord),
    Tune,
}

/// One agent action, for checking workflow order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tick: Tick,
    pub agent: AgentId,
    pub action: Action,
}

/// A finished run: the report plus what produced it.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub trace: Vec<TraceEntry>,
    pub kpis: KpiLog,
    pub messages: Vec<BusMessage>,
    pub policy: PolicyState,
}

/// What the anomaly detector established, shared with downstream agents.
#[derive(Debug, Clone, Default)]
struct Context {
    region: Option<String>,
    table: Option<String>,
    hypothesis: Option<PlanNode>,
}

#[derive(Debug, Default)]
struct AnomalyState {
    probe_payloads: Vec<Json>,
    matches: Vec<CatalogMatch>,
    samples: Vec<Json>,
    avg: Json,
    var: Json,
    anomaly_score: f64,
    events: Json,
}

#[derive(Debug, Default)]
struct SentimentState {
    region: String,
    hits: Vec<String>,
    labels: Vec<String>,
}

/// Retrieval fan-out for an agent that routes through attention.
#[derive(Debug, Default)]
struct GatherState {
    region: String,
    plan: Option<ExecutionPlan>,
    payloads: BTreeMap<String, Json>,
    feedback_hits: Vec<String>,
    arrived: BTreeSet<String>,
    quorum: Option<QuorumState>,
    result: Option<Json>,
}

#[derive(Debug, Default)]
struct RoutingState {
    anomaly: Option<Json>,
    root_cause: Option<Json>,
    forecast: Option<Json>,
    published: bool,
}

pub struct World {
    cfg: ScenarioConfig,
    features: FeatureSet,
    agents: Vec<AgentSpec>,
    bus: MessageBus,
    gateway: Gateway,
    queue: BTreeMap<(Tick, u64), Event>,
    seq: u64,
    now: Tick,
    policy: PolicyState,
    costs: CostModel,
    access: AccessModel,
    last_label: Option<String>,
    quorum_cfg: QuorumConfig,
    context: Context,
    anomaly: AnomalyState,
    sentiment: SentimentState,
    root: GatherState,
    forecast: GatherState,
    routing: RoutingState,
    early_serves: u64,
    revisions: u64,
    final_decision: Option<(Tick, Json)>,
    trace: Vec<TraceEntry>,
    seen_shared: (u64, u64),
}

fn payload_err(what: &str) -> RuntimeError {
    RuntimeError::Payload(what.to_string())
}

fn fill(template: &str, region: &str, keyword: &str) -> String {
    template.replace("{region}", region).replace("{keyword}", keyword)
}

/// Column values of a scan payload.
fn column_values(payload: &Json, column: &str) -> Vec<Json> {
    let Some(idx) = payload
        .get("columns")
        .and_then(Json::as_array)
        .and_then(|cols| cols.iter().position(|c| c.as_str() == Some(column)))
    else {
        return Vec::new();
    };
    payload
        .get("rows")
        .and_then(Json::as_array)
        .map(|rows| rows.iter().filter_map(|r| r.get(idx).cloned()).collect())
        .unwrap_or_default()
}

/// Field values of a stream payload.
fn event_values(payload: &Json, field: &str) -> Vec<Json> {
    payload
        .get("events")
        .and_then(Json::as_array)
        .map(|evs| evs.iter().filter_map(|e| e.get("fields").and_then(|f| f.get(field)).cloned()).collect())
        .unwrap_or_default()
}

/// Value of the group keyed `key` in an aggregate payload.
fn group_value(payload: &Json, key: &str) -> Option<f64> {
    payload
        .get("groups")?
        .as_array()?
        .iter()
        .find(|g| g.get("key").and_then(Json::as_str) == Some(key))?
        .get("value")?
        .as_f64()
}

fn hit_texts(payload: &Json) -> Vec<String> {
    payload
        .get("hits")
        .and_then(Json::as_array)
        .map(|hits| {
            hits.iter()
                .filter_map(|h| h.get("doc")?.get("text")?.as_str().map(str::to_string))
                .collect()
        })
        .unwrap_or_default()
}

impl World {
    pub fn new(cfg: &ScenarioConfig, base: &Path, seed: u64) -> Result<Self, RuntimeError> {
        cfg.validate()?;
        let agents = standard_agents();
        validate_agents(&agents)?;
        let fabric = Fabric::load(&cfg.engines, &cfg.sources, base, cfg.dim)?;
        let wf = &cfg.workflow;
        for s in [&wf.relational_source, &wf.vector_source, &wf.stream_source, &wf.inference_source] {
            fabric.source(s)?;
        }
        let features = cfg.features.clone();
        let gateway = Gateway::new(
            fabric,
            seed,
            features.clone(),
            cfg.thresholds,
            cfg.caches,
            cfg.policy.half_life,
            &cfg.federations,
        )?;
        let mut bus = MessageBus::default();
        for a in &agents {
            for topic in a.subscriptions() {
                bus.subscribe(a.agent_id, topic);
            }
        }
        let mut access = AccessModel::new(cfg.thresholds.tau_p, cfg.policy.prefetch_top_k)?;
        for trace in &cfg.access_history {
            access.observe_trace(trace);
        }
        let policy = PolicyState { k: cfg.policy.k, half_life: cfg.policy.half_life, theta_q: cfg.thresholds.theta_q, ..PolicyState::default() };
        let quorum_cfg = QuorumConfig {
            weights: cfg.thresholds.weights,
            revision_bound: cfg.thresholds.revision_bound,
            ..QuorumConfig::default()
        };
        Ok(World {
            cfg: cfg.clone(),
            features,
            agents,
            bus,
            gateway,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            policy,
            costs: CostModel::new(crate::orchestration::optimizer::DEFAULT_EMA_ALPHA)?,
            access,
            last_label: None,
            quorum_cfg,
            context: Context::default(),
            anomaly: AnomalyState::default(),
            sentiment: SentimentState::default(),
            root: GatherState::default(),
            forecast: GatherState::default(),
            routing: RoutingState::default(),
            early_serves: 0,
            revisions: 0,
            final_decision: None,
            trace: Vec::new(),
            seen_shared: (0, 0),
        })
    }

    fn on(&self, f: Feature) -> bool {
        self.features.has(f)
    }

    fn schedule(&mut self, at: Tick, event: Event) {
        self.seq += 1;
        self.queue.insert((at.max(self.now), self.seq), event);
    }

    pub fn run(mut self) -> Result<ScenarioRun, RuntimeError> {
        self.schedule(0, Event::Step(AgentId::Orchestrator, Stage::Kickoff));
        if self.on(Feature::Optimizer) {
            self.schedule(self.cfg.policy.tune_every, Event::Tune);
        }
        while let Some(((tick, _), event)) = self.queue.pop_first() {
            self.now = tick;
            self.gateway.materialize(tick)?;
            match event {
                Event::Deliver(agent) => {
                    for msg in self.bus.drain(agent) {
                        self.on_message(agent, msg)?;
                    }
                }
                Event::Step(agent, stage) => self.step(agent, stage)?,
                Event::Part(agent, source) => self.on_part(agent, &source)?,
                Event::Kpi(kpi) => self.costs.update(&kpi)?,
                Event::Tune => self.tune()?,
            }
            self.flush_kpis();
        }
        Ok(self.finish())
    }

    fn flush_kpis(&mut self) {
        let fresh = self.gateway.take_fresh_kpis();
        if self.on(Feature::Optimizer) {
            for (at, kpi) in fresh {
                self.schedule(at, Event::Kpi(kpi));
            }
        }
    }

    fn tune(&mut self) -> Result<(), RuntimeError> {
        let stats = *self.gateway.stats();
        let (lookups, hits) = (stats.shared_lookups - self.seen_shared.0, stats.shared_hits - self.seen_shared.1);
        for i in 0..lookups {
            self.policy.observe_shared_lookup(i < hits);
        }
        self.seen_shared = (stats.shared_lookups, stats.shared_hits);
        self.policy = tune_policies(&self.policy);
        self.gateway.set_half_life(self.policy.half_life)?;
        let busy = self.queue.values().any(|e| !matches!(e, Event::Tune | Event::Kpi(_)));
        if busy {
            self.schedule(self.now + self.cfg.policy.tune_every, Event::Tune);
        }
        Ok(())
    }

    fn finish(self) -> ScenarioRun {
        let stats = *self.gateway.stats();
        let rate = |hits: u64, lookups: u64| if lookups == 0 { 0.0 } else { round6(hits as f64 / lookups as f64) };
        let (latency, decision) = match &self.final_decision {
            Some((t, d)) => (*t, d.clone()),
            None => (self.now, Json::Null),
        };
        ScenarioRun {
            report: ScenarioReport {
                backend_queries: stats.backend_queries,
                probes: stats.probes,
                suppressed_probes: stats.suppressed_probes,
                micro_cache_hit_rate: rate(stats.micro_hits, stats.micro_lookups),
                shared_cache_hit_rate: rate(stats.shared_hits, stats.shared_lookups),
                total_latency: latency,
                total_usd: round6(stats.usd),
                quorum_early_serves: self.early_serves,
                revisions: self.revisions,
                final_decision: decision,
            },
            trace: self.trace,
            kpis: self.gateway.kpis().clone(),
            messages: self.bus.log().to_vec(),
            policy: self.policy,
        }
    }

    fn publish(&mut self, sender: AgentId, topic: &str, payload: Json) {
        let msg = BusMessage::new(topic, sender, payload, self.now, self.cfg.dim);
        let receivers: Vec<AgentId> = self.bus.subscribers(topic).collect();
        self.bus.publish(msg);
        for r in receivers {
            self.schedule(self.now, Event::Deliver(r));
        }
    }

    /// Issues a request and feeds the access model and prefetcher.
    fn request(&mut self, agent: AgentId, label: &str, node: &PlanNode) -> Result<(Json, Tick), RuntimeError> {
        let served = self.gateway.request(agent, node, self.now)?;
        self.note_access(agent, label)?;
        Ok((served.payload, served.ready_at))
    }

    fn note_access(&mut self, agent: AgentId, label: &str) -> Result<(), RuntimeError> {
        if let Some(prev) = self.last_label.replace(label.to_string()) {
            self.access.observe_access(&prev, label);
        }
        if !(self.on(Feature::Prefetch) && self.on(Feature::SharedCache)) {
            return Ok(());
        }
        for (next, _) in self.access.predict_prefetch(label) {
            if let Some(node) = self.node_for_label(&next) {
                self.gateway.prefetch(agent, &node, self.now)?;
            }
        }
        Ok(())
    }

    /// Builds the node a request label stands for, when enough is known.
    fn node_for_label(&self, label: &str) -> Option<PlanNode> {
        let region = self.context.region.as_deref()?;
        match label {
            "stream.region_scan" => Some(self.region_scan(region)),
            "vector.feedback_search" => Some(self.feedback_search(region, "")),
            "relational.status_scan" => Some(self.status_scan(self.context.table.as_deref()?, region)),
            _ => None,
        }
    }

    fn wait_until(&mut self, agent: AgentId, stage: Stage, ready: Tick) {
        self.schedule(ready, Event::Step(agent, stage));
    }

    fn stream_topic(&self) -> String {
        match self.gateway.fabric().source(&self.cfg.workflow.stream_source).map(|s| &s.data) {
            Ok(SourceData::Stream(log)) => log.topic.clone(),
            _ => "events".into(),
        }
    }

    fn region_scan(&self, region: &str) -> PlanNode {
        let src = &self.cfg.workflow.stream_source;
        PlanNode::new(
            format!("{src}/region_scan"),
            NodeKind::Scan {
                source: src.clone(),
                table: self.stream_topic(),
                predicate: Predicate::eq(self.cfg.workflow.group_key.clone(), region),
                limit: None,
            },
        )
    }

    fn feedback_search(&self, region: &str, keyword: &str) -> PlanNode {
        let wf = &self.cfg.workflow;
        let text = fill(&wf.feedback_query, region, keyword);
        PlanNode::new(
            format!("{}/search", wf.vector_source),
            NodeKind::VectorSearch {
                source: wf.vector_source.clone(),
                query_embedding: self.gateway.fabric().embed(&text),
                query_text: text,
                k: wf.feedback_k,
            },
        )
    }

    fn status_scan(&self, table: &str, region: &str) -> PlanNode {
        let wf = &self.cfg.workflow;
        PlanNode::new(
            format!("{}/status_scan", wf.relational_source),
            NodeKind::Scan {
                source: wf.relational_source.clone(),
                table: table.into(),
                predicate: Predicate::eq(wf.group_key.clone(), region).and("status", CmpOp::Ne, "delivered"),
                limit: None,
            },
        )
    }

    fn classify_node(&self, model: &str, text: &str) -> PlanNode {
        let src = &self.cfg.workflow.inference_source;
        PlanNode::new(
            format!("{src}/{model}"),
            NodeKind::Infer { source: src.clone(), model_id: model.into(), input: text.into() },
        )
    }

    fn spec(&self, agent: AgentId) -> &AgentSpec {
        self.agents.iter().find(|a| a.agent_id == agent).expect("every agent has a spec")
    }

    fn on_message(&mut self, agent: AgentId, msg: BusMessage) -> Result<(), RuntimeError> {
        let Some(action) = self.spec(agent).action_for(&msg.topic) else { return Ok(()) };
        self.trace.push(TraceEntry { tick: self.now, agent, action });
        let p = msg.payload;
        let text = |k: &str| p.get(k).and_then(Json::as_str).map(str::to_string);
        match action {
            Action::DetectAnomalies => {
                let goal = text("goal").ok_or_else(|| payload_err("task without goal"))?;
                let task = self.gateway.fabric().embed(&goal);
                self.gateway.register_task(agent, &task, self.now)?;
                let mut ready = self.now;
                for node in probe_stage(&goal, &self.cfg.workflow.relational_source) {
                    let (payload, at) = self.request(agent, "relational.probe", &node)?;
                    self.anomaly.probe_payloads.push(payload);
                    ready = ready.max(at);
                }
                self.wait_until(agent, Stage::Sample, ready);
            }
            Action::GaugeSentiment => {
                let region = text("region").ok_or_else(|| payload_err("task without region"))?;
                let keyword = keyword_of(&p);
                self.start_task(agent, &format!("customer sentiment about {keyword} delays in {region}"))?;
                let node = self.feedback_search(&region, &keyword);
                let (payload, ready) = self.request(agent, "vector.feedback_search", &node)?;
                self.sentiment.region = region;
                self.sentiment.hits = hit_texts(&payload);
                self.wait_until(agent, Stage::Classify, ready);
            }
            Action::FindRootCause => {
                let region = text("region").ok_or_else(|| payload_err("task without region"))?;
                let keyword = keyword_of(&p);
                self.start_gather(agent, &region, &keyword)?;
            }
            Action::ForecastImpact => {
                let region = text("region").ok_or_else(|| payload_err("task without region"))?;
                let keyword = keyword_of(&p);
                self.start_gather(agent, &region, &keyword)?;
            }
            Action::NoteAnomaly => {
                if agent == AgentId::RoutingOptimization {
                    self.routing.anomaly = Some(p);
                    self.maybe_plan_route();
                }
            }
            Action::NoteRootCause => match agent {
                AgentId::RoutingOptimization => {
                    self.routing.root_cause = Some(p);
                    self.maybe_plan_route();
                }
                AgentId::Forecasting => self.maybe_publish_forecast(),
                _ => {}
            },
            Action::NoteForecast => {
                self.routing.forecast = Some(p);
                self.maybe_plan_route();
            }
            Action::NoteSentiment | Action::NoteRevision => {}
            Action::RecordRoutePlan => {
                if self.final_decision.is_none() {
                    self.final_decision = Some((self.now, p));
                }
            }
        }
        Ok(())
    }

    fn start_task(&mut self, agent: AgentId, description: &str) -> Result<(), RuntimeError> {
        let task = self.gateway.fabric().embed(description);
        self.gateway.register_task(agent, &task, self.now)?;
        Ok(())
    }

    fn step(&mut self, agent: AgentId, stage: Stage) -> Result<(), RuntimeError> {
        let wf = self.cfg.workflow.clone();
        match (agent, stage) {
            (AgentId::Orchestrator, Stage::Kickoff) => {
                self.publish(agent, &AgentId::AnomalyDetection.task_topic(), json!({ "goal": wf.goal }));
            }
            (AgentId::AnomalyDetection, Stage::Sample) => {
                self.anomaly.matches = matched_tables(&self.anomaly.probe_payloads)?;
                if self.anomaly.matches.is_empty() {
                    self.gateway.finish_task(agent);
                    return Ok(());
                }
                let mut ready = self.now;
                for node in sample_stage(&wf.relational_source, &self.anomaly.matches.clone()) {
                    let (payload, at) = self.request(agent, "relational.sample", &node)?;
                    self.anomaly.samples.push(payload);
                    ready = ready.max(at);
                }
                self.wait_until(agent, Stage::Hypothesize, ready);
            }
            (AgentId::AnomalyDetection, Stage::Hypothesize) => {
                let Some(node) =
                    hypothesis_stage(&wf.relational_source, &self.anomaly.matches, &self.anomaly.samples, &wf.group_key)
                else {
                    self.gateway.finish_task(agent);
                    return Ok(());
                };
                let (_, ready) = self.request(agent, "relational.hypothesis", &node)?;
                if let NodeKind::Aggregate { input, .. } = &node.kind {
                    if let NodeKind::Scan { table, .. } = &input.kind {
                        self.context.table = Some(table.clone());
                    }
                }
                self.context.hypothesis = Some(node);
                self.wait_until(agent, Stage::Assess, ready);
            }
            (AgentId::AnomalyDetection, Stage::Assess) => {
                let hypothesis = self.context.hypothesis.clone().ok_or_else(|| payload_err("no hypothesis"))?;
                let NodeKind::Aggregate { field: FieldExpr::Diff { later, earlier }, .. } = &hypothesis.kind else {
                    return Err(payload_err("hypothesis is not a delay aggregate"));
                };
                let table = self.context.table.clone().unwrap_or_default();
                let variance = delay_aggregate(&wf.relational_source, &table, &wf.group_key, AggFn::Var, later, earlier);
                let (avg, a) = self.request(agent, "relational.hypothesis", &hypothesis)?;
                let (var, b) = self.request(agent, "relational.variance", &variance)?;
                self.anomaly.avg = avg;
                self.anomaly.var = var;
                self.wait_until(agent, Stage::Correlate, a.max(b));
            }
            (AgentId::AnomalyDetection, Stage::Correlate) => {
                let groups = self.anomaly.var.get("groups").and_then(Json::as_array).cloned().unwrap_or_default();
                let flagged = groups
                    .iter()
                    .filter_map(|g| Some((g.get("key")?.as_str()?.to_string(), g.get("value")?.as_f64()?)))
                    .filter(|(_, v)| *v >= wf.variance_threshold)
                    .fold(None::<(String, f64)>, |best, (k, v)| match best {
                        Some((_, bv)) if bv >= v => best,
                        _ => Some((k, v)),
                    });
                let Some((region, var)) = flagged else {
                    self.gateway.finish_task(agent);
                    return Ok(());
                };
                self.anomaly.anomaly_score = round6(var / (var + wf.variance_threshold));
                self.context.region = Some(region.clone());
                let node = self.region_scan(&region);
                let (events, ready) = self.request(agent, "stream.region_scan", &node)?;
                self.anomaly.events = events;
                self.wait_until(agent, Stage::Announce, ready);
            }
            (AgentId::AnomalyDetection, Stage::Announce) => {
                let region = self.context.region.clone().ok_or_else(|| payload_err("no region"))?;
                let keyword = dominant(event_values(&self.anomaly.events, "event_type").iter().filter_map(Json::as_str))
                    .and_then(|t| crate::embedding::tokenize(&t).into_iter().next())
                    .unwrap_or_default();
                let summary = json!({
                    "region": region,
                    "anomaly_score": self.anomaly.anomaly_score,
                    "correlated_keywords": [keyword],
                    "avg_delay_min": group_value(&self.anomaly.avg, &region),
                    "table": self.context.table,
                });
                self.publish(agent, topics::ANOMALIES, summary.clone());
                for target in [AgentId::SentimentAnalysis, AgentId::RootCause, AgentId::Forecasting] {
                    self.publish(agent, &target.task_topic(), summary.clone());
                }
                self.gateway.finish_task(agent);
            }
            (AgentId::SentimentAnalysis, Stage::Classify) => {
                let mut ready = self.now;
                let mut labels = Vec::new();
                for text in self.sentiment.hits.clone() {
                    let node = self.classify_node(&wf.sentiment_model, &text);
                    let (payload, at) = self.request(agent, "inference.sentiment", &node)?;
                    labels.push(payload.get("label").and_then(Json::as_str).unwrap_or_default().to_string());
                    ready = ready.max(at);
                }
                self.sentiment.labels = labels;
                self.wait_until(agent, Stage::Summarize, ready);
            }
            (AgentId::SentimentAnalysis, Stage::Summarize) => {
                let n = self.sentiment.labels.len();
                let negative = self.sentiment.labels.iter().filter(|l| **l == wf.negative_label).count();
                let share = if n == 0 { 0.0 } else { round6(negative as f64 / n as f64) };
                let payload = json!({ "region": self.sentiment.region, "negative_share": share, "documents": n });
                self.publish(agent, topics::SENTIMENT, payload);
                self.gateway.finish_task(agent);
            }
            (AgentId::RootCause | AgentId::Forecasting, Stage::Retrieve) => self.retrieve(agent)?,
            (AgentId::RootCause, Stage::FeedbackDocs) => {
                let mut ready = self.now;
                let mut docs = Vec::new();
                for text in self.root.feedback_hits.clone() {
                    let node = self.classify_node(&wf.sentiment_model, &text);
                    let (payload, at) = self.request(agent, "inference.sentiment", &node)?;
                    docs.push(json!({ "text": text, "label": payload.get("label") }));
                    ready = ready.max(at);
                }
                self.root.payloads.insert(wf.vector_source.clone(), json!({ "docs": docs }));
                self.schedule(ready, Event::Part(agent, wf.vector_source.clone()));
            }
            (agent, stage) => return Err(RuntimeError::Payload(format!("{agent} has no step {stage:?}"))),
        }
        Ok(())
    }

    fn gather_mut(&mut self, agent: AgentId) -> &mut GatherState {
        if agent == AgentId::RootCause {
            &mut self.root
        } else {
            &mut self.forecast
        }
    }

    /// Routes the agent's intent and waits for its probes.
    fn start_gather(&mut self, agent: AgentId, region: &str, keyword: &str) -> Result<(), RuntimeError> {
        let wf = self.cfg.workflow.clone();
        let dim = self.cfg.dim;
        let table = self.context.table.clone().unwrap_or_default();
        let intent = if agent == AgentId::RootCause {
            let text = format!("root cause of {keyword} delays in {region}");
            self.start_task(agent, &text)?;
            QueryIntent::new(
                "root_cause/1",
                agent.as_str(),
                text,
                [Modality::Relational, Modality::Vector, Modality::Stream, Modality::Inference],
                dim,
            )
            .with_probe_term(keyword)
            .with_retrieval(self.status_scan(&table, region))
            .with_retrieval(self.feedback_search(region, keyword))
            .with_retrieval(self.region_scan(region))
            .with_retrieval(self.classify_node(&wf.reasoning_model, &fill(&wf.reasoning_prompt, region, keyword)))
        } else {
            let text = format!("forecast {keyword} delays in {region}");
            self.start_task(agent, &text)?;
            let hypothesis = self.context.hypothesis.clone().ok_or_else(|| payload_err("no hypothesis"))?;
            QueryIntent::new("forecasting/1", agent.as_str(), text, [Modality::Relational, Modality::Stream], dim)
                .with_probe_term(keyword)
                .with_retrieval(hypothesis)
                .with_retrieval(self.region_scan(region))
        };
        let attention = self.on(Feature::Attention);
        let router = RouterConfig {
            tau_a: self.cfg.thresholds.tau_a,
            prune_factor: self.cfg.thresholds.prune_factor,
            usefulness_cutoff: self.cfg.thresholds.usefulness_cutoff,
            attention,
            pruning: attention,
        };
        let descriptors = self.gateway.fabric().descriptors();
        let policy = self.policy.clone();
        let now = self.now;
        let costs = if self.on(Feature::Optimizer) { self.costs.clone() } else { CostModel::default() };
        let plan = {
            let mut probes = self.gateway.probe_backend(agent, now);
            route(&intent, &descriptors, &policy, &costs, &router, now, &mut probes)?
        };
        for p in &plan.probes {
            self.policy.observe_probe(p.usefulness >= router.usefulness_cutoff);
        }
        if !plan.probes.is_empty() {
            self.note_access(agent, "probe")?;
        }
        let ready = plan.ready_at;
        let quorum = QuorumState::new(self.quorum_cfg)?;
        let g = self.gather_mut(agent);
        *g = GatherState { region: region.to_string(), plan: Some(plan), quorum: Some(quorum), ..GatherState::default() };
        self.wait_until(agent, Stage::Retrieve, ready);
        Ok(())
    }

    fn retrieve(&mut self, agent: AgentId) -> Result<(), RuntimeError> {
        let wf = self.cfg.workflow.clone();
        let nodes = self.gather_mut(agent).plan.as_ref().map(|p| p.retrievals.clone()).unwrap_or_default();
        for node in nodes {
            let source = node.source().unwrap_or_default().to_string();
            let label = match node.op_kind() {
                crate::fabric::ir::OpKind::Aggregate => "relational.hypothesis",
                crate::fabric::ir::OpKind::VectorSearch => "vector.feedback_search",
                crate::fabric::ir::OpKind::Infer => "inference.reasoning",
                _ if source == wf.stream_source => "stream.region_scan",
                _ => "relational.status_scan",
            };
            let (payload, ready) = self.request(agent, label, &node)?;
            if agent == AgentId::RootCause && source == wf.vector_source {
                self.root.feedback_hits = hit_texts(&payload);
                self.wait_until(agent, Stage::FeedbackDocs, ready);
            } else {
                self.gather_mut(agent).payloads.insert(source.clone(), payload);
                self.schedule(ready, Event::Part(agent, source));
            }
        }
        Ok(())
    }

    /// Cause named by the first matching keyword rule.
    fn cause_of(&self, text: &str) -> Option<String> {
        let lower = text.to_lowercase();
        self.cfg.workflow.causes.iter().find(|r| lower.contains(&r.keyword.to_lowercase())).map(|r| r.cause.clone())
    }

    /// Most frequent cause; ties go to the rule listed first.
    fn majority_cause<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> String {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            if let Some(c) = self.cause_of(t) {
                *counts.entry(c).or_default() += 1;
            }
        }
        let rank = |c: &str| self.cfg.workflow.causes.iter().position(|r| r.cause == c).unwrap_or(usize::MAX);
        counts
            .into_iter()
            .max_by(|(a, x), (b, y)| x.cmp(y).then_with(|| rank(b).cmp(&rank(a))))
            .map(|(c, _)| c)
            .unwrap_or_else(|| "unknown".into())
    }

    fn partial_cause(&self, source: &str, payload: &Json) -> String {
        let wf = &self.cfg.workflow;
        let strings = |vals: Vec<Json>| vals.into_iter().filter_map(|v| v.as_str().map(str::to_string)).collect::<Vec<_>>();
        let texts: Vec<String> = if source == wf.relational_source {
            strings(column_values(payload, "status"))
        } else if source == wf.stream_source {
            strings(event_values(payload, "event_type"))
        } else if source == wf.vector_source {
            let docs = payload.get("docs").and_then(Json::as_array).cloned().unwrap_or_default();
            let negative: Vec<String> = docs
                .iter()
                .filter(|d| d.get("label").and_then(Json::as_str) == Some(wf.negative_label.as_str()))
                .filter_map(|d| d.get("text")?.as_str().map(str::to_string))
                .collect();
            if negative.is_empty() {
                docs.iter().filter_map(|d| d.get("text")?.as_str().map(str::to_string)).collect()
            } else {
                negative
            }
        } else {
            payload.get("label").and_then(Json::as_str).map(str::to_string).into_iter().collect()
        };
        self.majority_cause(texts.iter().map(String::as_str))
    }

    fn on_part(&mut self, agent: AgentId, source: &str) -> Result<(), RuntimeError> {
        let payload = self.gather_mut(agent).payloads.get(source).cloned().unwrap_or(Json::Null);
        self.gather_mut(agent).arrived.insert(source.to_string());
        if agent == AgentId::Forecasting {
            let g = &self.forecast;
            let expected = g.plan.as_ref().map_or(0, |p| p.retrievals.len());
            if g.arrived.len() == expected {
                self.gateway.finish_task(agent);
                self.maybe_publish_forecast();
            }
            return Ok(());
        }
        let cause = self.partial_cause(source, &payload);
        let modality = self.gateway.fabric().source(source)?.data.modality();
        let result = PartialResult {
            query_id: "root_cause/1".into(),
            source_id: source.to_string(),
            modality,
            payload: json!({ "cause": cause }),
            result_embedding: self.gateway.fabric().embed(&cause.replace('_', " ")),
            arrived_at: self.now,
        };
        let quorum_on = self.on(Feature::Quorum);
        let now = self.now;
        let g = &mut self.root;
        let plan = g.plan.as_ref().ok_or_else(|| payload_err("no plan"))?;
        let expectation = plan.expectation.clone();
        let total = expectation.expected_sources.len();
        let state = g.quorum.as_mut().ok_or_else(|| payload_err("no quorum state"))?;
        if state.served {
            if let Some(rev) = state.revise(&result)? {
                self.revisions += 1;
                self.policy.observe_served_query(true);
                let payload = json!({ "query_id": rev.query_id, "source_id": rev.source_id, "cause": cause, "divergence": round6(rev.divergence) });
                self.publish(agent, topics::REVISIONS, payload);
            }
        } else {
            state.accept_partial(&expectation, result)?;
            let arrived = state.received.len();
            let outcome = if quorum_on {
                state.maybe_serve(&expectation, now)?
            } else if arrived == total {
                let everything = QuorumExpectation { theta_q: f64::MIN_POSITIVE, ..expectation.clone() };
                state.maybe_serve(&everything, now)?
            } else {
                ServeOutcome::Wait
            };
            if let ServeOutcome::Serve(answer) = outcome {
                if arrived < total {
                    self.early_serves += 1;
                }
                self.policy.observe_served_query(false);
                let cause = self.majority_cause(
                    answer.parts.values().filter_map(|(_, p)| p.get("cause").and_then(Json::as_str)),
                );
                let payload = json!({
                    "region": self.root.region,
                    "cause": cause,
                    "confidence": round6(answer.confidence),
                    "sources": answer.parts.keys().collect::<Vec<_>>(),
                });
                self.root.result = Some(payload.clone());
                self.publish(agent, topics::ROOT_CAUSES, payload);
            }
        }
        if self.root.arrived.len() == total {
            self.gateway.finish_task(agent);
        }
        Ok(())
    }

    fn maybe_publish_forecast(&mut self) {
        let g = &self.forecast;
        let Some(plan) = &g.plan else { return };
        if g.result.is_some() || g.arrived.len() < plan.retrievals.len() || self.root.result.is_none() {
            return;
        }
        let wf = &self.cfg.workflow;
        let from_aggregate = g.payloads.get(&wf.relational_source).and_then(|p| group_value(p, &g.region));
        let from_stream = g.payloads.get(&wf.stream_source).and_then(|p| {
            let delays: Vec<f64> = event_values(p, "delay_min").iter().filter_map(Json::as_f64).collect();
            (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64)
        });
        let expected = from_aggregate.or(from_stream).map(round6);
        let payload = json!({
            "region": g.region,
            "expected_delay_min": expected,
            "cause": self.root.result.as_ref().and_then(|r| r.get("cause")).cloned(),
        });
        self.forecast.result = Some(payload.clone());
        self.publish(AgentId::Forecasting, topics::FORECASTS, payload);
    }

    fn maybe_plan_route(&mut self) {
        let r = &self.routing;
        let (Some(anomaly), Some(cause), Some(_)) = (&r.anomaly, &r.root_cause, &r.forecast) else { return };
        if r.published {
            return;
        }
        let region = anomaly.get("region").cloned().unwrap_or(Json::Null);
        let cause = cause.get("cause").and_then(Json::as_str).unwrap_or("unknown").to_string();
        let new_route = self.cfg.workflow.routes.get(&cause).cloned().unwrap_or_else(|| "keep current route".into());
        self.routing.published = true;
        self.trace.push(TraceEntry { tick: self.now, agent: AgentId::RoutingOptimization, action: Action::RecordRoutePlan });
        self.publish(
            AgentId::RoutingOptimization,
            topics::ROUTE_PLANS,
            json!({ "region": region, "cause": cause, "new_route": new_route }),
        );
    }
}

fn keyword_of(payload: &Json) -> String {
    payload
        .get("correlated_keywords")
        .and_then(Json::as_array)
        .and_then(|k| k.first())
        .and_then(Json::as_str)
        .unwrap_or_default()
        .to_string()
}

/// Most frequent string; ties go to the lexicographically smallest.
fn dominant<'a>(items: impl Iterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for i in items {
        *counts.entry(i).or_default() += 1;
    }
    counts.into_iter().fold(None::<(&str, usize)>, |best, (k, n)| match best {
        Some((_, bn)) if bn >= n => best,
        _ => Some((k, n)),
    }).map(|(k, _)| k.to_string())
}

/// Runs the scenario with fixture paths resolved against `base`.
pub fn run_scenario(config: &ScenarioConfig, base: &Path, seed: u64) -> Result<ScenarioReport, RuntimeError> {
    Ok(run_scenario_traced(config, base, seed)?.report)
}

pub fn run_scenario_traced(config: &ScenarioConfig, base: &Path, seed: u64) -> Result<ScenarioRun, RuntimeError> {
    World::new(config, base, seed)?.run()
}

/// Runs the scenario once per feature set.
pub fn sweep(config: &ScenarioConfig, base: &Path, seed: u64, sets: &[FeatureSet]) -> Result<Vec<ScenarioReport>, RuntimeError> {
    crate::parallel::map(sets, |f| {
        let mut cfg = config.clone();
        cfg.features = f.clone();
        run_scenario(&cfg, base, seed)
    })
    .into_iter()
    .collect()
}
