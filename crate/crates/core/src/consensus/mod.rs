//! Root selection, virtual voting and block finalization.

mod election;
mod engine;
mod forkless;
mod frames;

pub use election::{decide_atropos, decide_clotho, AtroposOutcome, Candidate, ElectionState, VoteRecord};
pub use engine::{Engine, EngineConfig, EngineError, EventStatus};
pub use forkless::{forkless_cause, forkless_cause_idx, observer_power};
pub use frames::{assign_frame, FrameError, FrameIndex, FrameInfo};
