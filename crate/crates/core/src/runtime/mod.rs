//! Scripted agents, the message bus and the logistics scenario.

pub mod agents;
pub mod bus;
pub mod config;
pub mod gateway;
pub mod probe;
pub mod report;
pub mod scenario;

use thiserror::Error;

use crate::attention::AttentionError;
use crate::cache::CacheError;
use crate::embedding::DimensionMismatch;
use crate::fabric::FabricError;
use crate::orchestration::optimizer::OptimizerError;
use crate::orchestration::prefetch::PrefetchError;
use crate::orchestration::RouteError;
use crate::quorum::QuorumError;

pub use agents::{AgentId, AgentSpec};
pub use bus::{BusMessage, MessageBus};
pub use config::{Feature, FeatureSet, ScenarioConfig};
pub use report::{compare, Comparison, ReportFormat, ScenarioReport};
pub use scenario::{run_scenario, run_scenario_traced, sweep, ScenarioRun};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unexpected payload: {0}")]
    Payload(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Quorum(#[from] QuorumError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Prefetch(#[from] PrefetchError),
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
}

impl RuntimeError {
    /// Whether the error stems from configuration or fixtures rather than the run itself.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RuntimeError::Config(_) | RuntimeError::UnknownFeature(_) | RuntimeError::Fabric(FabricError::Fixture(_))
        )
    }
}
