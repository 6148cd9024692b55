//! Speculative probing for agents that only partly know the catalog.
//!
//! Three stages: name-pattern metadata probes built from the goal's tokens,
//! a small row sample per matched table, then a delay hypothesis over the
//! first pair of timestamp columns found.

use serde_json::Value as Json;

use super::agents::AgentSpec;
use super::RuntimeError;
use crate::embedding::tokenize;
use crate::fabric::ir::{AggFn, FieldExpr, NodeKind, PlanNode, Predicate};
use crate::fabric::relational::CatalogMatch;
use crate::fabric::value::{ColumnType, Value};

/// Rows fetched per matched table.
pub const SAMPLE_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeStage {
    Probe,
    Sample,
    Hypothesis,
}

/// One `%token%` metadata probe per distinct goal token, in goal order.
pub fn probe_stage(goal: &str, source: &str) -> Vec<PlanNode> {
    let mut seen = Vec::new();
    for t in tokenize(goal) {
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen.into_iter()
        .map(|t| {
            PlanNode::new(
                format!("probe/{source}/{t}"),
                NodeKind::MetaProbe { source: source.to_string(), name_pattern: format!("%{t}%") },
            )
        })
        .collect()
}

/// Tables matched by any probe payload, deduplicated and sorted by name.
pub fn matched_tables(payloads: &[Json]) -> Result<Vec<CatalogMatch>, RuntimeError> {
    let mut out: Vec<CatalogMatch> = Vec::new();
    for p in payloads {
        let Some(tables) = p.get("tables") else { continue };
        let tables: Vec<CatalogMatch> = serde_json::from_value(tables.clone())
            .map_err(|e| RuntimeError::Payload(format!("catalog match: {e}")))?;
        for t in tables {
            if !out.iter().any(|m| m.table == t.table) {
                out.push(t);
            }
        }
    }
    out.sort_by(|a, b| a.table.cmp(&b.table));
    Ok(out)
}

pub fn sample_node(source: &str, table: &str) -> PlanNode {
    PlanNode::new(
        format!("sample/{source}/{table}"),
        NodeKind::Scan { source: source.into(), table: table.into(), predicate: Predicate::all(), limit: Some(SAMPLE_LIMIT) },
    )
}

pub fn sample_stage(source: &str, matches: &[CatalogMatch]) -> Vec<PlanNode> {
    matches.iter().map(|m| sample_node(source, &m.table)).collect()
}

/// Aggregate of `later - earlier` by `group_key` over the whole table.
pub fn delay_aggregate(source: &str, table: &str, group_key: &str, agg: AggFn, later: &str, earlier: &str) -> PlanNode {
    let tag = match agg {
        AggFn::Avg => "avg",
        AggFn::Count => "count",
        AggFn::Var => "var",
    };
    let scan = PlanNode::new(
        format!("hypothesis/{source}/{table}/scan"),
        NodeKind::Scan { source: source.into(), table: table.into(), predicate: Predicate::all(), limit: None },
    );
    PlanNode::new(
        format!("hypothesis/{source}/{table}/{tag}"),
        NodeKind::Aggregate {
            input: Box::new(scan),
            group_key: group_key.into(),
            agg,
            field: FieldExpr::Diff { later: later.into(), earlier: earlier.into() },
        },
    )
}

/// The first table (by name) with two timestamp columns and a `group_key`
/// column yields an average-delay hypothesis. The later column is the one that
/// is greater or equal in most sampled rows; ties keep catalog order.
pub fn hypothesis_stage(
    source: &str,
    matches: &[CatalogMatch],
    samples: &[Json],
    group_key: &str,
) -> Option<PlanNode> {
    for m in matches {
        if !m.columns.iter().any(|c| c.name == group_key) {
            continue;
        }
        let stamps: Vec<&str> =
            m.columns.iter().filter(|c| c.ty == ColumnType::Timestamp).map(|c| c.name.as_str()).collect();
        if stamps.len() < 2 {
            continue;
        }
        let (a, b) = (stamps[0], stamps[1]);
        let sample = samples.iter().find(|s| s.get("table").and_then(Json::as_str) == Some(m.table.as_str()));
        let (later, earlier) = match sample.map(|s| votes_for_first_later(s, a, b)) {
            Some(v) if v < 0 => (b, a),
            Some(_) => (a, b),
            None => (b, a),
        };
        return Some(delay_aggregate(source, &m.table, group_key, AggFn::Avg, later, earlier));
    }
    None
}

/// Rows where `a >= b` minus rows where `a < b`.
fn votes_for_first_later(sample: &Json, a: &str, b: &str) -> i64 {
    let columns: Vec<&str> = sample
        .get("columns")
        .and_then(Json::as_array)
        .map(|c| c.iter().filter_map(Json::as_str).collect())
        .unwrap_or_default();
    let (Some(ia), Some(ib)) = (columns.iter().position(|c| *c == a), columns.iter().position(|c| *c == b)) else {
        return 0;
    };
    let rows: Vec<Vec<Value>> = sample
        .get("rows")
        .and_then(|r| serde_json::from_value(r.clone()).ok())
        .unwrap_or_default();
    rows.iter()
        .filter_map(|r| Some((r.get(ia)?.as_f64()?, r.get(ib)?.as_f64()?)))
        .map(|(x, y)| if x >= y { 1 } else { -1 })
        .sum()
}

/// Runs all three stages through `run`, which executes one node and returns
/// its payload. Returns every node issued, in order.
pub fn speculative_probe_sequence<F>(
    agent: &AgentSpec,
    goal: &str,
    source: &str,
    group_key: &str,
    mut run: F,
) -> Result<Vec<PlanNode>, RuntimeError>
where
    F: FnMut(ProbeStage, &PlanNode) -> Result<Json, RuntimeError>,
{
    if !agent.partial_knowledge {
        return Err(RuntimeError::Config(format!("agent `{}` does not probe speculatively", agent.agent_id)));
    }
    let mut issued = Vec::new();
    let mut probe_payloads = Vec::new();
    for node in probe_stage(goal, source) {
        probe_payloads.push(run(ProbeStage::Probe, &node)?);
        issued.push(node);
    }
    let matches = matched_tables(&probe_payloads)?;
    if matches.is_empty() {
        return Ok(issued);
    }
    let mut samples = Vec::new();
    for node in sample_stage(source, &matches) {
        samples.push(run(ProbeStage::Sample, &node)?);
        issued.push(node);
    }
    if let Some(node) = hypothesis_stage(source, &matches, &samples, group_key) {
        run(ProbeStage::Hypothesis, &node)?;
        issued.push(node);
    }
    Ok(issued)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Modality;
    use crate::embedding::DEFAULT_DIM;
    use crate::fabric::relational::{RelationalDb, Table};
    use crate::fabric::{EngineDescriptor, ExecContext, Fabric, LatencyModel, SourceData};
    use crate::runtime::agents::{standard_agents, AgentId};

    fn fabric(csv: &str) -> Fabric {
        let mut f = Fabric::new(DEFAULT_DIM);
        f.add_engine(EngineDescriptor::standard("pg", Modality::Relational, LatencyModel { base: 10, per_row: 0, jitter: 0 }))
            .unwrap();
        let mut db = RelationalDb::default();
        db.add_table(Table::from_csv("shipments", csv.as_bytes()).unwrap());
        f.add_source("db", "pg", SourceData::Relational(db)).unwrap();
        f
    }

    fn anomaly_agent() -> AgentSpec {
        standard_agents().into_iter().find(|a| a.agent_id == AgentId::AnomalyDetection).unwrap()
    }

    fn run_all(f: &Fabric, goal: &str) -> Vec<PlanNode> {
        speculative_probe_sequence(&anomaly_agent(), goal, "db", "region", |_, node| {
            let ctx = ExecContext { query_id: "q", component: "t", now: 0, seed: 1 };
            Ok(f.run(node, ctx)?.result.payload)
        })
        .unwrap()
    }

    const WITH_TIMES: &str = "ship_id,region,eta,act_delivery\n\
        1,SEA,2025-03-01T10:00,2025-03-01T10:30\n\
        2,EU,2025-03-01T10:00,2025-03-01T10:05\n";

    #[test]
    fn goal_tokens_become_patterns_and_hypothesis_diffs_timestamps() {
        let nodes = run_all(&fabric(WITH_TIMES), "find unusual delivery delays");
        let patterns: Vec<String> = nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::MetaProbe { name_pattern, .. } => Some(name_pattern.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(patterns, ["%find%", "%unusual%", "%delivery%", "%delays%"]);
        assert!(matches!(&nodes[4].kind, NodeKind::Scan { table, limit: Some(5), .. } if table == "shipments"));
        match &nodes[5].kind {
            NodeKind::Aggregate { agg: AggFn::Avg, field, group_key, .. } => {
                assert_eq!(group_key, "region");
                assert_eq!(field, &FieldExpr::Diff { later: "act_delivery".into(), earlier: "eta".into() });
            }
            other => panic!("expected hypothesis, got {other:?}"),
        }
        assert_eq!(nodes.len(), 6);
    }

    #[test]
    fn no_timestamp_pair_stops_after_sampling() {
        let nodes = run_all(&fabric("ship_id,region,delivery_status\n1,SEA,late\n"), "delivery delays");
        assert_eq!(nodes.len(), 3);
        assert_eq!(nodes[2].op_kind(), crate::fabric::ir::OpKind::Scan);
    }

    #[test]
    fn no_match_ends_after_probes() {
        let nodes = run_all(&fabric(WITH_TIMES), "weather forecasts");
        assert_eq!(nodes.len(), 2);
    }

    #[test]
    fn full_knowledge_agents_are_refused() {
        let root = standard_agents().into_iter().find(|a| a.agent_id == AgentId::RootCause).unwrap();
        assert!(speculative_probe_sequence(&root, "x", "db", "region", |_, _| Ok(Json::Null)).is_err());
    }
}
