//! The six scripted agents and their trigger rules.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RuntimeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Orchestrator,
    AnomalyDetection,
    SentimentAnalysis,
    RootCause,
    Forecasting,
    RoutingOptimization,
}

impl AgentId {
    pub const ALL: [AgentId; 6] = [
        AgentId::Orchestrator,
        AgentId::AnomalyDetection,
        AgentId::SentimentAnalysis,
        AgentId::RootCause,
        AgentId::Forecasting,
        AgentId::RoutingOptimization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentId::Orchestrator => "orchestrator",
            AgentId::AnomalyDetection => "anomaly_detection",
            AgentId::SentimentAnalysis => "sentiment_analysis",
            AgentId::RootCause => "root_cause",
            AgentId::Forecasting => "forecasting",
            AgentId::RoutingOptimization => "routing_optimization",
        }
    }

    pub fn task_topic(self) -> String {
        format!("tasks/{}", self.as_str())
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub mod topics {
    pub const ANOMALIES: &str = "anomalies";
    pub const SENTIMENT: &str = "sentiment";
    pub const ROOT_CAUSES: &str = "root_causes";
    pub const FORECASTS: &str = "forecasts";
    pub const ROUTE_PLANS: &str = "route_plans";
    pub const REVISIONS: &str = "revisions";
}

/// What an agent does when a message arrives on a topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DetectAnomalies,
    GaugeSentiment,
    FindRootCause,
    ForecastImpact,
    NoteAnomaly,
    NoteRootCause,
    NoteForecast,
    NoteSentiment,
    NoteRevision,
    RecordRoutePlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerRule {
    pub topic: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: AgentId,
    /// Ordered trigger rules; the first rule matching a topic fires.
    pub rules: Vec<TriggerRule>,
    pub publishes: Vec<String>,
    /// Knows the catalog only vaguely and must probe before querying.
    pub partial_knowledge: bool,
}

impl AgentSpec {
    pub fn subscriptions(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.topic.as_str())
    }

    pub fn action_for(&self, topic: &str) -> Option<Action> {
        self.rules.iter().find(|r| r.topic == topic).map(|r| r.action)
    }
}

fn spec(agent_id: AgentId, rules: &[(String, Action)], publishes: &[String], partial_knowledge: bool) -> AgentSpec {
    AgentSpec {
        agent_id,
        rules: rules.iter().map(|(t, a)| TriggerRule { topic: t.clone(), action: *a }).collect(),
        publishes: publishes.to_vec(),
        partial_knowledge,
    }
}

/// The logistics workflow: anomaly detection fans out to sentiment, root cause
/// and forecasting; routing waits for root cause and forecast.
pub fn standard_agents() -> Vec<AgentSpec> {
    use topics::*;
    use AgentId::*;
    let t = |s: &str| s.to_string();
    vec![
        spec(
            Orchestrator,
            &[
                (t(ROUTE_PLANS), Action::RecordRoutePlan),
                (t(ROOT_CAUSES), Action::NoteRootCause),
                (t(SENTIMENT), Action::NoteSentiment),
                (t(REVISIONS), Action::NoteRevision),
            ],
            &[AnomalyDetection.task_topic()],
            false,
        ),
        spec(
            AnomalyDetection,
            &[(AnomalyDetection.task_topic(), Action::DetectAnomalies)],
            &[t(ANOMALIES), SentimentAnalysis.task_topic(), RootCause.task_topic(), Forecasting.task_topic()],
            true,
        ),
        spec(SentimentAnalysis, &[(SentimentAnalysis.task_topic(), Action::GaugeSentiment)], &[t(SENTIMENT)], false),
        spec(
            RootCause,
            &[(RootCause.task_topic(), Action::FindRootCause), (t(ANOMALIES), Action::NoteAnomaly)],
            &[t(ROOT_CAUSES), t(REVISIONS)],
            false,
        ),
        spec(
            Forecasting,
            &[(Forecasting.task_topic(), Action::ForecastImpact), (t(ROOT_CAUSES), Action::NoteRootCause)],
            &[t(FORECASTS)],
            false,
        ),
        spec(
            RoutingOptimization,
            &[
                (t(ANOMALIES), Action::NoteAnomaly),
                (t(ROOT_CAUSES), Action::NoteRootCause),
                (t(FORECASTS), Action::NoteForecast),
            ],
            &[t(ROUTE_PLANS)],
            false,
        ),
    ]
}

/// Agent ids are unique and every subscribed topic has a producer.
pub fn validate_agents(agents: &[AgentSpec]) -> Result<(), RuntimeError> {
    let mut ids = BTreeSet::new();
    for a in agents {
        if !ids.insert(a.agent_id) {
            return Err(RuntimeError::Config(format!("duplicate agent `{}`", a.agent_id)));
        }
    }
    let produced: BTreeSet<&str> = agents.iter().flat_map(|a| a.publishes.iter().map(String::as_str)).collect();
    for a in agents {
        for topic in a.subscriptions() {
            if !produced.contains(topic) {
                return Err(RuntimeError::Config(format!("`{}` subscribes to `{topic}`, which nobody publishes", a.agent_id)));
            }
        }
    }
    Ok(())
}
