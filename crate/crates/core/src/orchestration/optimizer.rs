//! Per-operator cost models and bounded policy tuning.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fabric::ir::OpKind;
use crate::fabric::monitor::KPIRecord;

pub const DEFAULT_EMA_ALPHA: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("negative observation for {engine_id}/{op_kind}: {field} = {value}")]
    NegativeObservation { engine_id: String, op_kind: OpKind, field: &'static str, value: f64 },
    #[error("ema alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub est_latency: f64,
    pub est_token_cost: f64,
    pub est_usd: f64,
    pub sample_count: u64,
    pub ema_alpha: f64,
}

impl CostEstimate {
    fn observe(&mut self, latency: f64, tokens: f64, usd: f64) {
        if self.sample_count == 0 {
            self.est_latency = latency;
            self.est_token_cost = tokens;
            self.est_usd = usd;
        } else {
            let a = self.ema_alpha;
            self.est_latency = a * latency + (1.0 - a) * self.est_latency;
            self.est_token_cost = a * tokens + (1.0 - a) * self.est_token_cost;
            self.est_usd = a * usd + (1.0 - a) * self.est_usd;
        }
        self.sample_count += 1;
    }
}

/// EMA estimates keyed by `(engine_id, op_kind)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    ema_alpha: f64,
    #[serde(with = "keyed")]
    estimates: BTreeMap<(String, OpKind), CostEstimate>,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { ema_alpha: DEFAULT_EMA_ALPHA, estimates: BTreeMap::new() }
    }
}

impl CostModel {
    pub fn new(ema_alpha: f64) -> Result<Self, OptimizerError> {
        if !(ema_alpha > 0.0 && ema_alpha <= 1.0) {
            return Err(OptimizerError::InvalidAlpha(ema_alpha));
        }
        Ok(CostModel { ema_alpha, estimates: BTreeMap::new() })
    }

    pub fn estimate(&self, engine_id: &str, op_kind: OpKind) -> Option<&CostEstimate> {
        self.estimates.get(&(engine_id.to_string(), op_kind))
    }

    pub fn estimates(&self) -> impl Iterator<Item = (&(String, OpKind), &CostEstimate)> {
        self.estimates.iter()
    }

    /// Folds one observation into the estimate for its operator.
    pub fn observe(
        &mut self,
        engine_id: &str,
        op_kind: OpKind,
        latency: f64,
        tokens: f64,
        usd: f64,
    ) -> Result<&CostEstimate, OptimizerError> {
        for (field, value) in [("latency", latency), ("rows_or_tokens", tokens), ("usd", usd)] {
            if value < 0.0 || value.is_nan() {
                return Err(OptimizerError::NegativeObservation {
                    engine_id: engine_id.to_string(),
                    op_kind,
                    field,
                    value,
                });
            }
        }
        let alpha = self.ema_alpha;
        let est = self.estimates.entry((engine_id.to_string(), op_kind)).or_insert(CostEstimate {
            est_latency: 0.0,
            est_token_cost: 0.0,
            est_usd: 0.0,
            sample_count: 0,
            ema_alpha: alpha,
        });
        est.observe(latency, tokens, usd);
        Ok(est)
    }

    /// Feeds a KPI record. Cache hits describe no backend work and are skipped.
    pub fn update(&mut self, kpi: &KPIRecord) -> Result<(), OptimizerError> {
        if kpi.cache_hit {
            return Ok(());
        }
        self.observe(&kpi.engine_id, kpi.op_kind, kpi.latency as f64, kpi.rows_or_tokens as f64, kpi.usd)?;
        Ok(())
    }

    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost model serializes")
    }
}

/// Serializes the tuple-keyed map as a list of objects.
mod keyed {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        engine_id: String,
        op_kind: OpKind,
        #[serde(flatten)]
        estimate: CostEstimate,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<(String, OpKind), CostEstimate>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Row> = map
            .iter()
            .map(|((e, k), v)| Row { engine_id: e.clone(), op_kind: *k, estimate: *v })
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, OpKind), CostEstimate>, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(rows.into_iter().map(|r| ((r.engine_id, r.op_kind), r.estimate)).collect())
    }
}

pub const K_MIN: usize = 1;
pub const K_MAX: usize = 8;
pub const HALF_LIFE_MIN: f64 = 10.0;
pub const HALF_LIFE_MAX: f64 = 1000.0;
pub const THETA_Q_FLOOR: f64 = 0.5;
pub const THETA_Q_CEIL: f64 = 0.99;

/// Tunable knobs plus the EMA rates that drive them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub k: usize,
    pub half_life: f64,
    pub theta_q: f64,
    pub probe_useful_rate: f64,
    pub revision_rate: f64,
    pub shared_cache_hit_rate: f64,
    pub rate_alpha: f64,
}

impl Default for PolicyState {
    fn default() -> Self {
        PolicyState {
            k: 2,
            half_life: 100.0,
            theta_q: 0.75,
            probe_useful_rate: 0.5,
            revision_rate: 0.05,
            shared_cache_hit_rate: 0.3,
            rate_alpha: DEFAULT_EMA_ALPHA,
        }
    }
}

impl PolicyState {
    fn ema(rate: &mut f64, alpha: f64, hit: bool) {
        *rate = alpha * f64::from(u8::from(hit)) + (1.0 - alpha) * *rate;
    }

    pub fn observe_probe(&mut self, useful: bool) {
        Self::ema(&mut self.probe_useful_rate, self.rate_alpha, useful);
    }

    pub fn observe_served_query(&mut self, revised: bool) {
        Self::ema(&mut self.revision_rate, self.rate_alpha, revised);
    }

    pub fn observe_shared_lookup(&mut self, hit: bool) {
        Self::ema(&mut self.shared_cache_hit_rate, self.rate_alpha, hit);
    }

    pub fn within_bounds(&self) -> bool {
        (K_MIN..=K_MAX).contains(&self.k)
            && (HALF_LIFE_MIN..=HALF_LIFE_MAX).contains(&self.half_life)
            && self.theta_q > 0.0
            && self.theta_q <= 1.0
    }

    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

/// One step of the hysteresis rule table; rates inside the dead zones leave
/// the corresponding knob unchanged.
pub fn tune_policies(policy: &PolicyState) -> PolicyState {
    let mut p = policy.clone();
    if p.probe_useful_rate < 0.2 {
        p.k = p.k.saturating_sub(1).max(K_MIN);
    } else if p.probe_useful_rate > 0.6 {
        p.k = (p.k + 1).min(K_MAX);
    }
    if p.revision_rate > 0.1 {
        p.theta_q = (p.theta_q + 0.05).min(THETA_Q_CEIL);
    } else if p.revision_rate < 0.02 {
        p.theta_q = (p.theta_q - 0.02).max(THETA_Q_FLOOR);
    }
    if p.shared_cache_hit_rate > 0.5 {
        p.half_life *= 1.25;
    } else if p.shared_cache_hit_rate < 0.1 {
        p.half_life *= 0.8;
    }
    p.k = p.k.clamp(K_MIN, K_MAX);
    p.half_life = p.half_life.clamp(HALF_LIFE_MIN, HALF_LIFE_MAX);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ema_examples() {
        let mut m = CostModel::default();
        assert_eq!(m.observe("pg", OpKind::Scan, 100.0, 0.0, 0.0).unwrap().est_latency, 100.0);
        let e = m.observe("pg", OpKind::Scan, 200.0, 0.0, 0.0).unwrap();
        assert!((e.est_latency - 120.0).abs() < 1e-12);
        assert_eq!(e.sample_count, 2);
        assert!(matches!(
            m.observe("pg", OpKind::Scan, -1.0, 0.0, 0.0),
            Err(OptimizerError::NegativeObservation { .. })
        ));
        assert_eq!(m.estimate("pg", OpKind::Scan).unwrap().sample_count, 2);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut m = CostModel::default();
        m.observe("ml", OpKind::Infer, 220.0, 4.0, 0.01).unwrap();
        let back: CostModel = serde_json::from_str(&m.snapshot()).unwrap();
        assert_eq!(back, m);
        assert!(m.snapshot().contains("\"est_latency\""));
    }

    #[test]
    fn rule_table_examples() {
        let base = PolicyState { k: 3, theta_q: 0.75, probe_useful_rate: 0.5, revision_rate: 0.05, ..Default::default() };
        assert_eq!(tune_policies(&base), base);
        let low = PolicyState { probe_useful_rate: 0.1, ..base.clone() };
        assert_eq!(tune_policies(&low).k, 2);
        let revising = PolicyState { revision_rate: 0.2, ..base.clone() };
        assert!((tune_policies(&revising).theta_q - 0.80).abs() < 1e-12);
        let hot = PolicyState { shared_cache_hit_rate: 0.9, half_life: 900.0, ..base };
        assert_eq!(tune_policies(&hot).half_life, 1000.0);
    }

    proptest! {
        #[test]
        fn tuning_stays_in_bounds(
            steps in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..200)
        ) {
            let mut p = PolicyState::default();
            for (u, r, h) in steps {
                p.probe_useful_rate = u;
                p.revision_rate = r;
                p.shared_cache_hit_rate = h;
                p = tune_policies(&p);
                prop_assert!(p.within_bounds());
            }
        }
    }
}
