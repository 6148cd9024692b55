//! Keyword-rule classifiers standing in for model servers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FabricError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub keyword: String,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    /// Ticks charged per call on top of the engine's latency model.
    pub base_latency: u64,
    #[serde(default)]
    pub per_token_latency: u64,
    pub usd_per_call: f64,
    pub rules: Vec<KeywordRule>,
    #[serde(default = "default_label")]
    pub default_label: String,
    #[serde(default = "default_score")]
    pub default_score: f64,
}

fn default_label() -> String {
    "unknown".into()
}

fn default_score() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub score: f64,
    pub tokens: u64,
}

impl ModelSpec {
    /// First rule whose keyword occurs in the lowercased input wins.
    pub fn classify(&self, input: &str) -> Classification {
        let lower = input.to_lowercase();
        let tokens = input.split_whitespace().count() as u64;
        let (label, score) = self
            .rules
            .iter()
            .find(|r| lower.contains(&r.keyword.to_lowercase()))
            .map(|r| (r.label.clone(), r.score))
            .unwrap_or_else(|| (self.default_label.clone(), self.default_score));
        Classification { label, score, tokens }
    }

    pub fn latency(&self, tokens: u64) -> u64 {
        self.base_latency + self.per_token_latency * tokens
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub models: BTreeMap<String, ModelSpec>,
}

impl ModelRegistry {
    pub fn add(&mut self, model: ModelSpec) {
        self.models.insert(model.model_id.clone(), model);
    }

    pub fn model(&self, id: &str) -> Result<&ModelSpec, FabricError> {
        self.models.get(id).ok_or_else(|| FabricError::UnknownModel(id.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_table_and_token_cost() {
        let m = ModelSpec {
            model_id: "llama2".into(),
            base_latency: 480,
            per_token_latency: 0,
            usd_per_call: 0.04,
            rules: vec![KeywordRule { keyword: "customs".into(), label: "customs_issue".into(), score: 0.9 }],
            default_label: default_label(),
            default_score: default_score(),
        };
        let c = m.classify("customs paperwork slow again");
        assert_eq!(c, Classification { label: "customs_issue".into(), score: 0.9, tokens: 4 });
        assert_eq!(m.classify("all good").label, "unknown");
    }
}
