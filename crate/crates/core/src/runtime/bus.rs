//! Topic-based pub/sub with per-topic FIFO delivery.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::agents::AgentId;
use crate::clock::Tick;
use crate::embedding::{embed_text_with_dim, Embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub topic: String,
    pub sender: AgentId,
    pub payload: serde_json::Value,
    /// Embedding of the serialized payload.
    pub embedding: Embedding,
    pub published_at: Tick,
}

impl BusMessage {
    pub fn new(topic: impl Into<String>, sender: AgentId, payload: serde_json::Value, published_at: Tick, dim: usize) -> Self {
        let embedding = embed_text_with_dim(&payload.to_string(), dim);
        BusMessage { topic: topic.into(), sender, payload, embedding, published_at }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MessageBus {
    subscribers: BTreeMap<String, BTreeSet<AgentId>>,
    inboxes: BTreeMap<AgentId, VecDeque<BusMessage>>,
    log: Vec<BusMessage>,
}

impl MessageBus {
    pub fn subscribe(&mut self, agent: AgentId, topic: impl Into<String>) {
        self.subscribers.entry(topic.into()).or_default().insert(agent);
    }

    pub fn subscribers(&self, topic: &str) -> impl Iterator<Item = AgentId> + '_ {
        self.subscribers.get(topic).into_iter().flatten().copied()
    }

    /// Enqueues `msg` for every current subscriber and returns how many there were.
    pub fn publish(&mut self, msg: BusMessage) -> usize {
        let targets: Vec<AgentId> = self.subscribers(&msg.topic).collect();
        for agent in &targets {
            self.inboxes.entry(*agent).or_default().push_back(msg.clone());
        }
        self.log.push(msg);
        targets.len()
    }

    /// Removes and returns everything waiting for `agent`, oldest first.
    pub fn drain(&mut self, agent: AgentId) -> Vec<BusMessage> {
        self.inboxes.get_mut(&agent).map(|q| q.drain(..).collect()).unwrap_or_default()
    }

    /// Every message published so far, in publication order.
    pub fn log(&self) -> &[BusMessage] {
        &self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn publish_counts_subscribers() {
        let mut bus = MessageBus::default();
        bus.subscribe(AgentId::RootCause, "anomalies");
        bus.subscribe(AgentId::RoutingOptimization, "anomalies");
        let summary = json!({ "region": "Singapore", "anomaly_score": 0.92, "correlated_keywords": ["customs"] });
        assert_eq!(bus.publish(BusMessage::new("anomalies", AgentId::AnomalyDetection, summary, 3, 64)), 2);
        assert_eq!(bus.publish(BusMessage::new("nobody", AgentId::AnomalyDetection, json!({}), 3, 64)), 0);
        assert_eq!(bus.drain(AgentId::RootCause).len(), 1);
        assert!(bus.drain(AgentId::RootCause).is_empty());
    }

    #[test]
    fn per_topic_fifo() {
        let mut bus = MessageBus::default();
        bus.subscribe(AgentId::Orchestrator, "route_plans");
        for i in 0..5 {
            bus.publish(BusMessage::new("route_plans", AgentId::RoutingOptimization, json!({ "n": i }), i, 64));
        }
        let got: Vec<i64> = bus.drain(AgentId::Orchestrator).iter().map(|m| m.payload["n"].as_i64().unwrap()).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }
}
