//! Deterministic network simulator: virtual nodes, latency, faults.

mod metrics;
mod node;
mod peer;
mod scenario;
mod sim;
mod transcript;

pub use metrics::{Metrics, TtfAccumulator};
pub use node::{node_seed, Message, NodeSim, Outgoing};
pub use peer::{select_peer, PeerBook, PeerError, PeerStrategy};
pub use scenario::{dur, Fault, HeavyTail, LatencyModel, Scenario, ScenarioError, ScheduledStakeChange, MILLI, SECOND};
pub use sim::run;
pub use transcript::{jsonl, parse_jsonl, EventRecord, ForkRecord, NodeReport, RunOutput, RunReport};
