//! Confidence-driven early serving of partial results.
//!
//! Confidence is the convex combination
//! `w_c * coverage + w_d * diversity + w_a * agreement`, where coverage is the
//! fraction of expected sources that responded, diversity the fraction of
//! expected modalities that responded and agreement the mean normalized
//! pairwise cosine of result embeddings. A state serves once, when confidence
//! reaches `theta_q`; later arrivals can only raise revision events.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::Modality;
use crate::clock::Tick;
use crate::embedding::{cosine, normalized_agreement, DimensionMismatch, Embedding};

#[derive(Debug, Error, PartialEq)]
pub enum QuorumError {
    #[error("result for query `{got}` offered to quorum of `{expected}`")]
    QueryMismatch { expected: String, got: String },
    #[error("source `{0}` is not part of the quorum")]
    UnexpectedSource(String),
    #[error("quorum needs at least one expected source")]
    NoExpectedSources,
    #[error("quorum weights must be non-negative and sum to 1, got {0:?}")]
    InvalidWeights([f64; 3]),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("quorum already served")]
    AlreadyServed,
    #[error("quorum not served yet")]
    NotServed,
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuorumWeights {
    pub coverage: f64,
    pub diversity: f64,
    pub agreement: f64,
}

impl Default for QuorumWeights {
    fn default() -> Self {
        QuorumWeights { coverage: 0.4, diversity: 0.2, agreement: 0.4 }
    }
}

impl QuorumWeights {
    pub fn new(coverage: f64, diversity: f64, agreement: f64) -> Result<Self, QuorumError> {
        let w = QuorumWeights { coverage, diversity, agreement };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), QuorumError> {
        let arr = [self.coverage, self.diversity, self.agreement];
        if arr.iter().any(|w| !(*w >= 0.0)) || (arr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(QuorumError::InvalidWeights(arr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuorumConfig {
    pub weights: QuorumWeights,
    /// Agreement used when fewer than two results are in.
    pub agreement_prior: f64,
    /// Normalized agreement below which a late result triggers a revision.
    pub revision_bound: f64,
}

impl Default for QuorumConfig {
    fn default() -> Self {
        QuorumConfig {
            weights: QuorumWeights::default(),
            agreement_prior: 0.5,
            revision_bound: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuorumExpectation {
    pub query_id: String,
    pub expected_sources: BTreeSet<String>,
    pub expected_modalities: BTreeSet<Modality>,
    pub theta_q: f64,
}

impl QuorumExpectation {
    pub fn new(
        query_id: impl Into<String>,
        expected: impl IntoIterator<Item = (String, Modality)>,
        theta_q: f64,
    ) -> Result<Self, QuorumError> {
        if !(theta_q > 0.0 && theta_q <= 1.0) {
            return Err(QuorumError::InvalidThreshold(theta_q));
        }
        let mut expected_sources = BTreeSet::new();
        let mut expected_modalities = BTreeSet::new();
        for (s, m) in expected {
            expected_sources.insert(s);
            expected_modalities.insert(m);
        }
        if expected_sources.is_empty() {
            return Err(QuorumError::NoExpectedSources);
        }
        Ok(QuorumExpectation { query_id: query_id.into(), expected_sources, expected_modalities, theta_q })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialResult {
    pub query_id: String,
    pub source_id: String,
    pub modality: Modality,
    pub payload: serde_json::Value,
    pub result_embedding: Embedding,
    pub arrived_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedAnswer {
    pub query_id: String,
    /// Payloads keyed by source id, each tagged with its modality.
    pub parts: BTreeMap<String, (Modality, serde_json::Value)>,
    pub confidence: f64,
    pub served_at: Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServeOutcome {
    Serve(MergedAnswer),
    Wait,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionEvent {
    pub query_id: String,
    pub source_id: String,
    pub payload: serde_json::Value,
    /// `1 - normalized agreement` with the served consensus.
    pub divergence: f64,
    pub at: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuorumState {
    pub received: Vec<PartialResult>,
    pub coverage: f64,
    pub diversity: f64,
    pub agreement: f64,
    pub conf: f64,
    pub served: bool,
    pub served_at: Option<Tick>,
    config: QuorumConfig,
    consensus: Option<Embedding>,
}

impl QuorumState {
    pub fn new(config: QuorumConfig) -> Result<Self, QuorumError> {
        config.weights.validate()?;
        Ok(QuorumState {
            received: Vec::new(),
            coverage: 0.0,
            diversity: 0.0,
            agreement: config.agreement_prior,
            conf: 0.0,
            served: false,
            served_at: None,
            config,
            consensus: None,
        })
    }

    pub fn config(&self) -> &QuorumConfig {
        &self.config
    }

    /// Adds a partial result; a repeat from the same source replaces the earlier one.
    pub fn accept_partial(
        &mut self,
        expectation: &QuorumExpectation,
        result: PartialResult,
    ) -> Result<(), QuorumError> {
        if result.query_id != expectation.query_id {
            return Err(QuorumError::QueryMismatch {
                expected: expectation.query_id.clone(),
                got: result.query_id,
            });
        }
        if !expectation.expected_sources.contains(&result.source_id) {
            return Err(QuorumError::UnexpectedSource(result.source_id));
        }
        match self.received.iter_mut().find(|r| r.source_id == result.source_id) {
            Some(slot) => *slot = result,
            None => self.received.push(result),
        }
        self.recompute(expectation)
    }

    fn recompute(&mut self, expectation: &QuorumExpectation) -> Result<(), QuorumError> {
        let sources: BTreeSet<&str> = self.received.iter().map(|r| r.source_id.as_str()).collect();
        let modalities: BTreeSet<Modality> = self.received.iter().map(|r| r.modality).collect();
        self.coverage = sources.len() as f64 / expectation.expected_sources.len() as f64;
        self.diversity = if expectation.expected_modalities.is_empty() {
            0.0
        } else {
            modalities.intersection(&expectation.expected_modalities).count() as f64
                / expectation.expected_modalities.len() as f64
        };
        self.agreement = mean_pairwise_agreement(&self.received)?.unwrap_or(self.config.agreement_prior);
        self.conf = self.confidence();
        Ok(())
    }

    pub fn confidence(&self) -> f64 {
        if self.received.is_empty() {
            return 0.0;
        }
        combine(&self.config.weights, self.coverage, self.diversity, self.agreement)
    }

    pub fn maybe_serve(&mut self, expectation: &QuorumExpectation, now: Tick) -> Result<ServeOutcome, QuorumError> {
        if self.served {
            return Err(QuorumError::AlreadyServed);
        }
        let conf = self.confidence();
        if self.received.is_empty() || conf < expectation.theta_q {
            return Ok(ServeOutcome::Wait);
        }
        self.served = true;
        self.served_at = Some(now);
        let dim = self.received[0].result_embedding.dim();
        self.consensus = Some(Embedding::mean(dim, self.received.iter().map(|r| &r.result_embedding))?);
        Ok(ServeOutcome::Serve(MergedAnswer {
            query_id: expectation.query_id.clone(),
            parts: self
                .received
                .iter()
                .map(|r| (r.source_id.clone(), (r.modality, r.payload.clone())))
                .collect(),
            confidence: conf,
            served_at: now,
        }))
    }

    /// Checks a late result against the consensus served earlier.
    pub fn revise(&self, late: &PartialResult) -> Result<Option<RevisionEvent>, QuorumError> {
        let consensus = self.consensus.as_ref().ok_or(QuorumError::NotServed)?;
        let agreement = (cosine(&late.result_embedding, consensus)? + 1.0) / 2.0;
        if agreement < self.config.revision_bound {
            Ok(Some(RevisionEvent {
                query_id: late.query_id.clone(),
                source_id: late.source_id.clone(),
                payload: late.payload.clone(),
                divergence: 1.0 - agreement,
                at: late.arrived_at,
            }))
        } else {
            Ok(None)
        }
    }
}

/// Weighted sum of the three quorum components.
pub fn combine(w: &QuorumWeights, coverage: f64, diversity: f64, agreement: f64) -> f64 {
    (w.coverage * coverage + w.diversity * diversity + w.agreement * agreement).clamp(0.0, 1.0)
}

fn mean_pairwise_agreement(results: &[PartialResult]) -> Result<Option<f64>, DimensionMismatch> {
    if results.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            total += normalized_agreement(&results[i].result_embedding, &results[j].result_embedding)?;
            pairs += 1;
        }
    }
    Ok(Some(total / pairs as f64))
}
