//! Scenario configuration and feature flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::agents::AgentId;
use super::RuntimeError;
use crate::fabric::{EngineDescriptor, SourceSpec};
use crate::quorum::QuorumWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Attention,
    MicroCache,
    SharedCache,
    Prefetch,
    Quorum,
    Optimizer,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Attention,
        Feature::MicroCache,
        Feature::SharedCache,
        Feature::Prefetch,
        Feature::Quorum,
        Feature::Optimizer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Attention => "attention",
            Feature::MicroCache => "micro_cache",
            Feature::SharedCache => "shared_cache",
            Feature::Prefetch => "prefetch",
            Feature::Quorum => "quorum",
            Feature::Optimizer => "optimizer",
        }
    }
}

impl FromStr for Feature {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| RuntimeError::UnknownFeature(s.trim().to_string()))
    }
}

/// Enabled fabric features. Parses from `all`, `none` or a comma list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureSet(BTreeSet<Feature>);

impl FeatureSet {
    pub fn all() -> Self {
        FeatureSet(Feature::ALL.into_iter().collect())
    }

    pub fn none() -> Self {
        FeatureSet::default()
    }

    pub fn has(&self, f: Feature) -> bool {
        self.0.contains(&f)
    }

    pub fn iter(&self) -> impl Iterator<Item = Feature> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<Feature> for FeatureSet {
    fn from_iter<I: IntoIterator<Item = Feature>>(iter: I) -> Self {
        FeatureSet(iter.into_iter().collect())
    }
}

impl FromStr for FeatureSet {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(FeatureSet::all()),
            "none" | "" => Ok(FeatureSet::none()),
            list => list.split(',').map(str::parse).collect(),
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.iter().map(Feature::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = RuntimeError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub tau_a: f64,
    pub tau_c: f64,
    pub tau_o: f64,
    pub tau_s: f64,
    pub tau_p: f64,
    pub theta_q: f64,
    pub weights: QuorumWeights,
    pub revision_bound: f64,
    pub prune_factor: f64,
    pub usefulness_cutoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub k: usize,
    pub half_life: f64,
    /// Ticks between tuning passes.
    pub tune_every: u64,
    pub prefetch_top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub micro_capacity: usize,
    pub shared_capacity: usize,
    /// Micro entries reused this often are copied to the shared cache.
    pub promote_min: u64,
    pub beta: f64,
}

/// Keyword to cause label, checked in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseRule {
    pub keyword: String,
    pub cause: String,
}

/// Sources, models and scripted parameters the agents use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowConfig {
    pub goal: String,
    pub relational_source: String,
    pub vector_source: String,
    pub stream_source: String,
    pub inference_source: String,
    pub sentiment_model: String,
    pub reasoning_model: String,
    /// Prompt for the reasoning model; `{region}` and `{keyword}` are substituted.
    pub reasoning_prompt: String,
    /// Prompt for the feedback search; `{region}` and `{keyword}` are substituted.
    pub feedback_query: String,
    pub feedback_k: usize,
    pub group_key: String,
    /// Delay variance (squared minutes) at or above which a region is anomalous.
    pub variance_threshold: f64,
    pub negative_label: String,
    pub causes: Vec<CauseRule>,
    /// Cause label to replacement route.
    pub routes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub dim: usize,
    pub features: FeatureSet,
    pub thresholds: Thresholds,
    pub policy: PolicyConfig,
    pub caches: CacheConfig,
    pub engines: Vec<EngineDescriptor>,
    pub sources: Vec<SourceSpec>,
    pub workflow: WorkflowConfig,
    /// Past request-label traces that seed the prefetch model.
    #[serde(default)]
    pub access_history: Vec<Vec<String>>,
    /// Agents sharing one shared cache; defaults to one federation of everyone.
    #[serde(default = "one_federation")]
    pub federations: Vec<Vec<AgentId>>,
}

fn one_federation() -> Vec<Vec<AgentId>> {
    vec![AgentId::ALL.to_vec()]
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, RuntimeError> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
            serde_json::error::Category::Data if e.to_string().starts_with("unknown feature") => {
                RuntimeError::UnknownFeature(e.to_string())
            }
            _ => RuntimeError::Config(e.to_string()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, RuntimeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RuntimeError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let t = &self.thresholds;
        let unit = [("tau_c", t.tau_c), ("tau_o", t.tau_o), ("tau_s", t.tau_s), ("tau_p", t.tau_p), ("theta_q", t.theta_q)];
        for (name, v) in unit {
            if !(v > 0.0 && v <= 1.0) {
                return Err(RuntimeError::Config(format!("{name} = {v} outside (0, 1]")));
            }
        }
        if !(t.tau_a > 0.0) {
            return Err(RuntimeError::Config(format!("tau_a = {} must be positive", t.tau_a)));
        }
        t.weights.validate().map_err(|e| RuntimeError::Config(e.to_string()))?;
        if self.dim == 0 {
            return Err(RuntimeError::Config("dim must be positive".into()));
        }
        if self.policy.tune_every == 0 {
            return Err(RuntimeError::Config("tune_every must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for agent in self.federations.iter().flatten() {
            if !seen.insert(*agent) {
                return Err(RuntimeError::Config(format!("agent `{agent}` is in more than one federation")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_lists_parse() {
        assert_eq!("all".parse::<FeatureSet>().unwrap(), FeatureSet::all());
        assert_eq!("none".parse::<FeatureSet>().unwrap(), FeatureSet::none());
        let fs: FeatureSet = "quorum, micro_cache".parse().unwrap();
        assert!(fs.has(Feature::Quorum) && fs.has(Feature::MicroCache) && !fs.has(Feature::Attention));
        assert_eq!(fs.to_string(), "micro_cache,quorum");
        assert!(matches!("quorum,bogus_flag".parse::<FeatureSet>(), Err(RuntimeError::UnknownFeature(f)) if f == "bogus_flag"));
    }
}
