//! Heterogeneous backend engines behind a minimal plan IR.
//!
//! Plan nodes are compiled on demand into an engine's native operation and
//! executed against in-memory data. Latency is simulated in logical ticks as a
//! pure function of engine, operation, result size and run seed.

pub mod inference;
pub mod ir;
pub mod monitor;
pub mod relational;
pub mod stream;
pub mod value;
pub mod vector;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::attention::{Modality, SourceDescriptor};
use crate::clock::Tick;
use crate::embedding::{embed_text_with_dim, splitmix64, token_hash, DimensionMismatch, Embedding};
use crate::quorum::PartialResult;

use inference::ModelRegistry;
use ir::{like, AggFn, FieldExpr, NodeKind, OpKind, PlanNode, Predicate};
use monitor::KPIRecord;
use relational::{RelationalDb, Table};
use stream::StreamLog;
use vector::VectorStore;

#[derive(Debug, Error, PartialEq)]
pub enum FabricError {
    #[error("engine `{engine}` does not support `{kind}`")]
    UnsupportedOp { kind: OpKind, engine: String },
    #[error("malformed predicate {0}")]
    MalformedPredicate(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{column}` in `{table}`")]
    UnknownColumn { table: String, column: String },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("source `{source_id}` is not served by engine `{engine}`")]
    EngineMismatch { source_id: String, engine: String },
    #[error("engine `{0}` declares no supported operations")]
    EmptyCapabilities(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

/// Simulated latency: `base + per_row * rows + jitter`, where jitter is a
/// seeded hash in `0..=jitter`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base: u64,
    #[serde(default)]
    pub per_row: u64,
    #[serde(default)]
    pub jitter: u64,
}

impl LatencyModel {
    pub fn ticks(&self, seed: u64, engine_id: &str, op: OpKind, rows: u64) -> u64 {
        let jitter = if self.jitter == 0 {
            0
        } else {
            let h = splitmix64(seed ^ token_hash(engine_id) ^ token_hash(op.as_str()).rotate_left(17) ^ rows.rotate_left(41));
            h % (self.jitter + 1)
        };
        self.base + self.per_row * rows + jitter
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenCostModel {
    pub usd_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineDescriptor {
    pub engine_id: String,
    pub modality: Modality,
    pub supported_kinds: BTreeSet<OpKind>,
    pub latency: LatencyModel,
    #[serde(default)]
    pub token_cost: Option<TokenCostModel>,
}

impl EngineDescriptor {
    /// The default capability set for an engine of the given modality.
    pub fn standard(engine_id: impl Into<String>, modality: Modality, latency: LatencyModel) -> Self {
        let kinds: &[OpKind] = match modality {
            Modality::Relational => &[OpKind::MetaProbe, OpKind::Scan, OpKind::Aggregate],
            Modality::Vector => &[OpKind::MetaProbe, OpKind::VectorSearch],
            Modality::Stream => &[OpKind::MetaProbe, OpKind::Scan],
            Modality::Inference => &[OpKind::MetaProbe, OpKind::Infer],
        };
        EngineDescriptor {
            engine_id: engine_id.into(),
            modality,
            supported_kinds: kinds.iter().copied().collect(),
            latency,
            token_cost: (modality == Modality::Inference).then_some(TokenCostModel { usd_per_token: 0.0 }),
        }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        if self.supported_kinds.is_empty() {
            return Err(FabricError::EmptyCapabilities(self.engine_id.clone()));
        }
        Ok(())
    }
}

/// Engine-internal executable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "native")]
pub enum NativeOp {
    CatalogMatch { source: String, pattern: String },
    TableScan { source: String, table: String, predicate: Predicate, limit: Option<usize> },
    GroupAggregate { source: String, table: String, predicate: Predicate, group_key: String, agg: AggFn, field: FieldExpr },
    TopK { source: String, query: Embedding, query_text: String, k: usize },
    EventFilter { source: String, predicate: Predicate, limit: Option<usize> },
    Classify { source: String, model_id: String, input: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledOp {
    pub engine_id: String,
    pub op_kind: OpKind,
    pub native: NativeOp,
}

impl CompiledOp {
    pub fn source(&self) -> &str {
        match &self.native {
            NativeOp::CatalogMatch { source, .. }
            | NativeOp::TableScan { source, .. }
            | NativeOp::GroupAggregate { source, .. }
            | NativeOp::TopK { source, .. }
            | NativeOp::EventFilter { source, .. }
            | NativeOp::Classify { source, .. } => source,
        }
    }
}

pub fn compile(node: &PlanNode, engine: &EngineDescriptor) -> Result<CompiledOp, FabricError> {
    node.validate()?;
    let kind = node.op_kind();
    let unsupported = || FabricError::UnsupportedOp { kind, engine: engine.engine_id.clone() };
    if !engine.supported_kinds.contains(&kind) {
        return Err(unsupported());
    }
    let native = match (&node.kind, engine.modality) {
        (NodeKind::MetaProbe { source, name_pattern }, _) => {
            NativeOp::CatalogMatch { source: source.clone(), pattern: name_pattern.clone() }
        }
        (NodeKind::Scan { source, table, predicate, limit }, Modality::Relational) => NativeOp::TableScan {
            source: source.clone(),
            table: table.clone(),
            predicate: predicate.clone(),
            limit: *limit,
        },
        (NodeKind::Scan { source, predicate, limit, .. }, Modality::Stream) => {
            NativeOp::EventFilter { source: source.clone(), predicate: predicate.clone(), limit: *limit }
        }
        (NodeKind::Aggregate { input, group_key, agg, field }, Modality::Relational) => match &input.kind {
            NodeKind::Scan { source, table, predicate, .. } => NativeOp::GroupAggregate {
                source: source.clone(),
                table: table.clone(),
                predicate: predicate.clone(),
                group_key: group_key.clone(),
                agg: *agg,
                field: field.clone(),
            },
            _ => return Err(FabricError::InvalidPlan("aggregate input must be a scan".into())),
        },
        (NodeKind::VectorSearch { source, query_embedding, query_text, k }, Modality::Vector) => NativeOp::TopK {
            source: source.clone(),
            query: query_embedding.clone(),
            query_text: query_text.clone(),
            k: *k,
        },
        (NodeKind::Infer { source, model_id, input }, Modality::Inference) => {
            NativeOp::Classify { source: source.clone(), model_id: model_id.clone(), input: input.clone() }
        }
        _ => return Err(unsupported()),
    };
    Ok(CompiledOp { engine_id: engine.engine_id.clone(), op_kind: kind, native })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceData {
    Relational(RelationalDb),
    Vector(VectorStore),
    Stream(StreamLog),
    Inference(ModelRegistry),
}

impl SourceData {
    pub fn modality(&self) -> Modality {
        match self {
            SourceData::Relational(_) => Modality::Relational,
            SourceData::Vector(_) => Modality::Vector,
            SourceData::Stream(_) => Modality::Stream,
            SourceData::Inference(_) => Modality::Inference,
        }
    }

    /// Words describing the source's contents, used for its summary embedding.
    fn catalog_text(&self) -> String {
        match self {
            SourceData::Relational(db) => db
                .tables
                .values()
                .flat_map(|t| std::iter::once(t.name.clone()).chain(t.columns.iter().map(|c| c.name.clone())))
                .collect::<Vec<_>>()
                .join(" "),
            SourceData::Vector(store) => {
                let mut words = store.field_names();
                words.extend(store.vocabulary());
                words.join(" ")
            }
            SourceData::Stream(log) => {
                let mut words = vec![log.topic.clone()];
                words.extend(log.catalog_terms());
                words.join(" ")
            }
            SourceData::Inference(reg) => reg
                .models
                .values()
                .flat_map(|m| {
                    std::iter::once(m.model_id.clone())
                        .chain(m.rules.iter().flat_map(|r| [r.keyword.clone(), r.label.clone()]))
                })
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub source_id: String,
    pub engine_id: String,
    pub data: SourceData,
}

/// Outcome of running one native op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub result: PartialResult,
    pub kpi: KPIRecord,
    /// Text the result embedding was computed from.
    pub summary: String,
}

impl Execution {
    pub fn completes_at(&self) -> Tick {
        self.result.arrived_at
    }
}

/// Who is executing and when.
#[derive(Debug, Clone, Copy)]
pub struct ExecContext<'a> {
    pub query_id: &'a str,
    pub component: &'a str,
    pub now: Tick,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fabric {
    engines: BTreeMap<String, EngineDescriptor>,
    sources: BTreeMap<String, Source>,
    dim: usize,
}

impl Fabric {
    pub fn new(dim: usize) -> Self {
        Fabric { engines: BTreeMap::new(), sources: BTreeMap::new(), dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_engine(&mut self, engine: EngineDescriptor) -> Result<(), FabricError> {
        engine.validate()?;
        self.engines.insert(engine.engine_id.clone(), engine);
        Ok(())
    }

    pub fn add_source(&mut self, source_id: impl Into<String>, engine_id: &str, data: SourceData) -> Result<(), FabricError> {
        let source_id = source_id.into();
        let engine = self.engine(engine_id)?;
        if engine.modality != data.modality() {
            return Err(FabricError::EngineMismatch { source_id, engine: engine_id.to_string() });
        }
        self.sources.insert(source_id.clone(), Source { source_id, engine_id: engine_id.to_string(), data });
        Ok(())
    }

    pub fn engine(&self, engine_id: &str) -> Result<&EngineDescriptor, FabricError> {
        self.engines.get(engine_id).ok_or_else(|| FabricError::UnknownEngine(engine_id.to_string()))
    }

    pub fn engines(&self) -> impl Iterator<Item = &EngineDescriptor> {
        self.engines.values()
    }

    pub fn source(&self, source_id: &str) -> Result<&Source, FabricError> {
        self.sources.get(source_id).ok_or_else(|| FabricError::UnknownSource(source_id.to_string()))
    }

    pub fn sources(&self) -> impl Iterator<Item = &Source> {
        self.sources.values()
    }

    pub fn engine_for(&self, source_id: &str) -> Result<&EngineDescriptor, FabricError> {
        self.engine(&self.source(source_id)?.engine_id)
    }

    /// Attention candidates: one descriptor per source, advertising the engine's base latency.
    pub fn descriptors(&self) -> Vec<SourceDescriptor> {
        self.sources
            .values()
            .map(|s| SourceDescriptor {
                source_id: s.source_id.clone(),
                modality: s.data.modality(),
                engine_id: s.engine_id.clone(),
                summary_embedding: embed_text_with_dim(&s.data.catalog_text(), self.dim),
                advertised_cost: self.advertised_cost(s),
            })
            .collect()
    }

    /// Engine base latency, plus the cheapest model's latency for inference sources.
    fn advertised_cost(&self, source: &Source) -> f64 {
        let base = self.engines.get(&source.engine_id).map_or(0, |e| e.latency.base);
        let model = match &source.data {
            SourceData::Inference(reg) => reg.models.values().map(|m| m.base_latency).min().unwrap_or(0),
            _ => 0,
        };
        (base + model) as f64
    }

    /// Compiles `node` for the engine serving its source.
    pub fn compile(&self, node: &PlanNode) -> Result<CompiledOp, FabricError> {
        let source = node
            .source()
            .ok_or(FabricError::UnsupportedOp { kind: node.op_kind(), engine: "*".into() })?;
        compile(node, self.engine_for(source)?)
    }

    /// Compile then execute.
    pub fn run(&self, node: &PlanNode, ctx: ExecContext<'_>) -> Result<Execution, FabricError> {
        execute(&self.compile(node)?, self, ctx)
    }

    pub fn embed(&self, text: &str) -> Embedding {
        embed_text_with_dim(text, self.dim)
    }
}

/// Runs a compiled op. The result arrives at `now + latency`; exactly one
/// KPI record describes the execution.
pub fn execute(op: &CompiledOp, fabric: &Fabric, ctx: ExecContext<'_>) -> Result<Execution, FabricError> {
    let source = fabric.source(op.source())?;
    if source.engine_id != op.engine_id {
        return Err(FabricError::EngineMismatch { source_id: source.source_id.clone(), engine: op.engine_id.clone() });
    }
    let engine = fabric.engine(&op.engine_id)?;
    let mut extra_latency = 0;
    let mut usd = 0.0;
    let (payload, summary, units) = match (&op.native, &source.data) {
        (NativeOp::CatalogMatch { pattern, .. }, data) => catalog_match(data, pattern),
        (NativeOp::TableScan { table, predicate, limit, .. }, SourceData::Relational(db)) => {
            let t = db.table(table)?;
            let rows = db.scan(table, predicate, *limit)?;
            let summary = rows
                .iter()
                .map(|r| r.iter().map(value::Value::render).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join("\n");
            let columns: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
            let n = rows.len() as u64;
            (json!({ "table": table, "columns": columns, "rows": rows }), summary, n)
        }
        (NativeOp::GroupAggregate { table, predicate, group_key, agg, field, .. }, SourceData::Relational(db)) => {
            let groups = db.group_aggregate(table, predicate, group_key, *agg, field)?;
            let scanned: usize = groups.iter().map(|g| g.count).sum();
            let summary = groups.iter().map(|g| format!("{} {}", g.key, g.value)).collect::<Vec<_>>().join("\n");
            (json!({ "group_key": group_key, "field": field.to_string(), "groups": groups }), summary, scanned as u64)
        }
        (NativeOp::TopK { query, k, .. }, SourceData::Vector(store)) => {
            let hits = store.top_k(query, *k)?;
            let docs: Vec<_> = hits
                .iter()
                .map(|h| json!({ "id": h.record_id, "similarity": h.similarity, "doc": store.doc(&h.record_id) }))
                .collect();
            let summary = hits
                .iter()
                .filter_map(|h| store.doc(&h.record_id)?.get("text")?.as_str().map(str::to_string))
                .collect::<Vec<_>>()
                .join("\n");
            (json!({ "hits": docs }), summary, hits.len() as u64)
        }
        (NativeOp::EventFilter { predicate, limit, .. }, SourceData::Stream(log)) => {
            let mut events = log.replay(predicate, ctx.now)?;
            if let Some(n) = limit {
                events.truncate(*n);
            }
            let summary = events
                .iter()
                .map(|e| e.fields.values().map(value::Value::render).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join("\n");
            let n = events.len() as u64;
            (json!({ "topic": log.topic, "events": events }), summary, n)
        }
        (NativeOp::Classify { model_id, input, .. }, SourceData::Inference(reg)) => {
            let model = reg.model(model_id)?;
            let c = model.classify(input);
            extra_latency = model.latency(c.tokens);
            usd = model.usd_per_call + engine.token_cost.map_or(0.0, |t| t.usd_per_token * c.tokens as f64);
            let summary = c.label.replace('_', " ");
            let n = c.tokens;
            (json!({ "model_id": model_id, "label": c.label, "score": c.score, "tokens": c.tokens }), summary, n)
        }
        _ => return Err(FabricError::UnsupportedOp { kind: op.op_kind, engine: op.engine_id.clone() }),
    };
    let latency = engine.latency.ticks(ctx.seed, &engine.engine_id, op.op_kind, units) + extra_latency;
    let arrived_at = ctx.now + latency;
    Ok(Execution {
        result: PartialResult {
            query_id: ctx.query_id.to_string(),
            source_id: source.source_id.clone(),
            modality: source.data.modality(),
            payload,
            result_embedding: embed_text_with_dim(&summary, fabric.dim),
            arrived_at,
        },
        kpi: KPIRecord {
            component: ctx.component.to_string(),
            engine_id: engine.engine_id.clone(),
            op_kind: op.op_kind,
            latency,
            rows_or_tokens: units,
            usd,
            cache_hit: false,
            timestamp: ctx.now,
        },
        summary,
    })
}

fn catalog_match(data: &SourceData, pattern: &str) -> (serde_json::Value, String, u64) {
    match data {
        SourceData::Relational(db) => {
            let matches = db.catalog_match(pattern);
            let summary = matches
                .iter()
                .flat_map(|m| std::iter::once(m.table.clone()).chain(m.columns.iter().map(|c| c.name.clone())))
                .collect::<Vec<_>>()
                .join(" ");
            let n = matches.len() as u64;
            (json!({ "pattern": pattern, "tables": matches }), summary, n)
        }
        other => {
            let names: Vec<String> = match other {
                SourceData::Vector(store) => {
                    let mut n = store.field_names();
                    n.extend(store.vocabulary());
                    n
                }
                SourceData::Stream(log) => log.catalog_terms(),
                SourceData::Inference(reg) => {
                    let mut n: Vec<String> = reg
                        .models
                        .values()
                        .flat_map(|m| {
                            std::iter::once(m.model_id.clone())
                                .chain(m.rules.iter().flat_map(|r| [r.keyword.clone(), r.label.clone()]))
                        })
                        .collect();
                    n.sort();
                    n.dedup();
                    n
                }
                SourceData::Relational(_) => unreachable!(),
            };
            let hits: Vec<String> = names.into_iter().filter(|n| like(pattern, n)).collect();
            let n = hits.len() as u64;
            (json!({ "pattern": pattern, "names": hits }), hits.join(" "), n)
        }
    }
}

/// Declarative source definition with paths relative to a base directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SourceSpec {
    Relational { source_id: String, engine_id: String, tables: BTreeMap<String, PathBuf> },
    Vector { source_id: String, engine_id: String, path: PathBuf },
    Stream { source_id: String, engine_id: String, topic: String, path: PathBuf },
    Inference { source_id: String, engine_id: String, models: Vec<inference::ModelSpec> },
}

fn read_fixture(base: &Path, rel: &Path) -> Result<String, FabricError> {
    let path = base.join(rel);
    std::fs::read_to_string(&path).map_err(|e| FabricError::Fixture(format!("{}: {e}", path.display())))
}

impl Fabric {
    /// Builds a fabric from engine descriptors and source specs, loading fixtures from `base`.
    pub fn load(
        engines: &[EngineDescriptor],
        sources: &[SourceSpec],
        base: &Path,
        dim: usize,
    ) -> Result<Self, FabricError> {
        let mut fabric = Fabric::new(dim);
        for e in engines {
            fabric.add_engine(e.clone())?;
        }
        for spec in sources {
            match spec {
                SourceSpec::Relational { source_id, engine_id, tables } => {
                    let mut db = RelationalDb::default();
                    for (name, rel) in tables {
                        db.add_table(Table::from_csv(name, read_fixture(base, rel)?.as_bytes())?);
                    }
                    fabric.add_source(source_id.clone(), engine_id, SourceData::Relational(db))?;
                }
                SourceSpec::Vector { source_id, engine_id, path } => {
                    let store = VectorStore::from_jsonl(&read_fixture(base, path)?, dim)?;
                    fabric.add_source(source_id.clone(), engine_id, SourceData::Vector(store))?;
                }
                SourceSpec::Stream { source_id, engine_id, topic, path } => {
                    let log = StreamLog::from_jsonl(topic, &read_fixture(base, path)?)?;
                    fabric.add_source(source_id.clone(), engine_id, SourceData::Stream(log))?;
                }
                SourceSpec::Inference { source_id, engine_id, models } => {
                    let mut reg = ModelRegistry::default();
                    for m in models {
                        reg.add(m.clone());
                    }
                    fabric.add_source(source_id.clone(), engine_id, SourceData::Inference(reg))?;
                }
            }
        }
        Ok(fabric)
    }
}
