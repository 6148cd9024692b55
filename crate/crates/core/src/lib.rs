//! Deterministic simulation of an agent-centric data fabric.

pub mod attention;
pub mod cache;
pub mod clock;
pub mod embedding;
pub mod fabric;
pub mod parallel;
pub mod quorum;
pub mod orchestration;
pub mod runtime;
