use std::path::{Path, PathBuf};

use fabric_core::fabric::ir::OpKind;
use fabric_core::runtime::agents::{Action, AgentId};
use fabric_core::runtime::{run_scenario, run_scenario_traced, sweep, FeatureSet, RuntimeError, ScenarioConfig};

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/logistics.json")
}

fn config(features: &str) -> (ScenarioConfig, PathBuf) {
    let path = scenario_path();
    let mut cfg = ScenarioConfig::from_path(&path).unwrap();
    cfg.features = features.parse().unwrap();
    (cfg, path.parent().unwrap().to_path_buf())
}

#[test]
fn all_features_beat_none_with_the_same_decision() {
    let (on, base) = config("all");
    let (off, _) = config("none");
    let a = run_scenario(&on, &base, 42).unwrap();
    let b = run_scenario(&off, &base, 42).unwrap();
    assert!(a.backend_queries < b.backend_queries, "{} vs {}", a.backend_queries, b.backend_queries);
    assert!(a.total_latency < b.total_latency);
    assert_eq!(a.final_decision, b.final_decision);
    assert_eq!(a.final_decision["new_route"], "Singapore >> Kuala Lumpur >> Destination");
    assert_eq!(a.final_decision["region"], "Southeast Asia");
}

#[test]
fn reports_are_deterministic() {
    let (cfg, base) = config("all");
    let a = run_scenario(&cfg, &base, 42).unwrap().to_json();
    let b = run_scenario(&cfg, &base, 42).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn every_feature_subset_reaches_the_same_decision() {
    let (cfg, base) = config("none");
    let names = ["attention", "micro_cache", "shared_cache", "prefetch", "quorum", "optimizer"];
    let sets: Vec<FeatureSet> = (0u32..64)
        .map(|mask| {
            let list: Vec<&str> = names.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| *n).collect();
            list.join(",").parse().unwrap()
        })
        .collect();
    let reports = sweep(&cfg, &base, 42, &sets).unwrap();
    for (set, r) in sets.iter().zip(&reports) {
        assert_eq!(r.final_decision, reports[0].final_decision, "features {set}");
    }
}

#[test]
fn workflow_respects_dependencies() {
    let (cfg, base) = config("all");
    let run = run_scenario_traced(&cfg, &base, 42).unwrap();
    let anomaly_at = run.messages.iter().find(|m| m.topic == "anomalies").map(|m| m.published_at).unwrap();
    let first = |agent: AgentId, action: Action| {
        run.trace.iter().find(|t| t.agent == agent && t.action == action).map(|t| t.tick).unwrap()
    };
    for (agent, action) in [
        (AgentId::RootCause, Action::FindRootCause),
        (AgentId::SentimentAnalysis, Action::GaugeSentiment),
        (AgentId::Forecasting, Action::ForecastImpact),
    ] {
        assert!(first(agent, action) >= anomaly_at);
    }
    let published = |topic: &str| run.messages.iter().find(|m| m.topic == topic).map(|m| m.published_at).unwrap();
    let plan_at = published("route_plans");
    assert!(plan_at >= published("root_causes") && plan_at >= published("forecasts"));
    let anomaly = &run.messages.iter().find(|m| m.topic == "anomalies").unwrap().payload;
    assert_eq!(anomaly["correlated_keywords"][0], "customs");
}

#[test]
fn root_cause_reuses_sentiment_classifications() {
    let (cfg, base) = config("all");
    let run = run_scenario_traced(&cfg, &base, 42).unwrap();
    let sentiment_model_calls = run
        .kpis
        .backend_records()
        .filter(|k| k.component == "root_cause" && k.op_kind == OpKind::Infer && k.latency < 400)
        .count();
    assert_eq!(sentiment_model_calls, 0);
    let served = run
        .kpis
        .records()
        .iter()
        .filter(|k| k.component == "root_cause" && k.op_kind == OpKind::Infer && k.cache_hit)
        .count();
    assert!(served >= 1);
}

#[test]
fn bad_inputs_are_config_errors() {
    let (mut cfg, base) = config("all");
    let missing = run_scenario(&cfg, Path::new("/nonexistent"), 42).unwrap_err();
    assert!(missing.is_config(), "{missing}");
    cfg.thresholds.tau_c = 1.5;
    assert!(matches!(run_scenario(&cfg, &base, 42), Err(RuntimeError::Config(_))));
    let text = std::fs::read_to_string(scenario_path()).unwrap().replace("\"features\": \"all\"", "\"features\": \"bogus_flag\"");
    let err = ScenarioConfig::from_json(&text).unwrap_err();
    assert!(err.is_config(), "{err}");
}
