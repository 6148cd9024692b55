//! Routing, prefetching and the feedback-driven optimizer.

pub mod optimizer;
pub mod prefetch;
pub mod router;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::cache::CacheError;
use crate::fabric::FabricError;
use crate::quorum::QuorumError;

pub use optimizer::{tune_policies, CostEstimate, CostModel, OptimizerError, PolicyState};
pub use prefetch::AccessModel;
pub use router::{route, ExecutionPlan, ProbeBackend, ProbeOutcome, ProbeRecord, QueryIntent, RouterConfig};

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("no candidate sources")]
    NoSources,
    #[error("no viable sources")]
    NoViableSources,
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Quorum(#[from] QuorumError),
    #[error("unknown in-flight probe or cache entry `{0}`")]
    UnknownReference(String),
}
