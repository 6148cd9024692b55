//! Logical time.

/// Simulated time; every latency and timestamp is expressed in ticks.
pub type Tick = u64;
