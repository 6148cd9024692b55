//! Replayable event log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ir::Predicate;
use super::value::Value;
use super::FabricError;
use crate::clock::Tick;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub timestamp: Tick,
    pub fields: BTreeMap<String, Value>,
}

impl Event {
    fn get(&self, name: &str) -> Option<&Value> {
        self.fields.get(name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamLog {
    pub topic: String,
    events: Vec<Event>,
}

impl StreamLog {
    pub fn new(topic: impl Into<String>, mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        StreamLog { topic: topic.into(), events }
    }

    /// JSON-lines events; `timestamp` is a logical tick, other fields are kept as values.
    pub fn from_jsonl(topic: &str, input: &str) -> Result<Self, FabricError> {
        let mut events = Vec::new();
        for (n, line) in input.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let obj: BTreeMap<String, serde_json::Value> = serde_json::from_str(line)
                .map_err(|e| FabricError::Fixture(format!("{topic} line {}: {e}", n + 1)))?;
            let timestamp = obj
                .get("timestamp")
                .and_then(|t| t.as_u64())
                .ok_or_else(|| FabricError::Fixture(format!("{topic} line {}: missing timestamp", n + 1)))?;
            let fields = obj
                .into_iter()
                .filter(|(k, _)| k != "timestamp")
                .map(|(k, v)| {
                    let value = match v {
                        serde_json::Value::String(s) => Value::Text(s),
                        serde_json::Value::Number(n) => match n.as_i64() {
                            Some(i) => Value::Int(i),
                            None => Value::Float(n.as_f64().unwrap_or(0.0)),
                        },
                        serde_json::Value::Null => Value::Null,
                        other => Value::Text(other.to_string()),
                    };
                    (k, value)
                })
                .collect();
            events.push(Event { timestamp, fields });
        }
        Ok(StreamLog::new(topic, events))
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn field_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.events.iter().flat_map(|e| e.fields.keys().cloned()).collect();
        names.push("timestamp".into());
        names.sort();
        names.dedup();
        names
    }

    /// Field names plus the distinct text values seen in events.
    pub fn catalog_terms(&self) -> Vec<String> {
        let mut terms = self.field_names();
        terms.extend(
            self.events
                .iter()
                .flat_map(|e| e.fields.values())
                .filter_map(|v| v.as_text().map(str::to_string)),
        );
        terms.sort();
        terms.dedup();
        terms
    }

    /// Events visible at `now` (timestamp <= now) that match `predicate`.
    pub fn replay(&self, predicate: &Predicate, now: Tick) -> Result<Vec<Event>, FabricError> {
        let known = self.field_names();
        if let Some(c) = predicate.columns().find(|c| !known.iter().any(|k| k == c)) {
            return Err(FabricError::UnknownColumn { table: self.topic.clone(), column: c.to_string() });
        }
        let visible = self.events.partition_point(|e| e.timestamp <= now);
        let ts_values: Vec<Value> = self.events[..visible].iter().map(|e| Value::Int(e.timestamp as i64)).collect();
        Ok(self.events[..visible]
            .iter()
            .zip(&ts_values)
            .filter(|(e, ts)| predicate.matches(|c| if c == "timestamp" { Some(*ts) } else { e.get(c) }))
            .map(|(e, _)| e.clone())
            .collect())
    }
}
