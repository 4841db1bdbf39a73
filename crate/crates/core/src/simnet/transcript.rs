//! Run artifacts: event log, fork log, per-node summaries and files on disk.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::scenario::Scenario;
use crate::consensus::VoteRecord;
use crate::stake::{EpochRecord, ValidatorSet};
use crate::types::{EventId, Hash32, Nanos, ValidatorId};

/// One line of `events.jsonl`: an event as seen by the reference node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub epoch: u64,
    pub id: EventId,
    pub creator: ValidatorId,
    pub seq: u64,
    pub lamport: u64,
    pub creation_time: Nanos,
    pub frame: u64,
    pub layer: u64,
    pub parents: Vec<EventId>,
    pub tx_count: usize,
    pub root: bool,
    pub clotho: bool,
    pub atropos: bool,
    pub fork: bool,
}

/// What one node knows about one fork pair at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForkRecord {
    pub node: ValidatorId,
    pub epoch: u64,
    pub creator: ValidatorId,
    pub a: EventId,
    pub b: EventId,
    /// Simulated time the node stored the second half.
    pub detected_at: Nanos,
    pub a_root: bool,
    pub b_root: bool,
    /// The root is forkless-caused by some root of the next frame.
    pub a_observed: bool,
    pub b_observed: bool,
    pub a_clotho: bool,
    pub b_clotho: bool,
    pub a_atropos: bool,
    pub b_atropos: bool,
    /// The event's transactions made it into a finalized block.
    pub a_final: bool,
    pub b_final: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: ValidatorId,
    pub honest: bool,
    pub chain_len: usize,
    pub events_emitted: u64,
    pub transactions_finalized: u64,
    pub avg_ttf: f64,
    /// Simulated time at which each block was appended.
    pub block_times: Vec<Nanos>,
    pub epochs: Vec<EpochRecord>,
    pub rejected_events: u64,
    pub pending_events: usize,
    pub cheaters_seen: Vec<ValidatorId>,
    pub time_regressions: u64,
    pub dag_epoch: u64,
    pub dag_len: usize,
    /// Digest of the sorted event ids in the open epoch's dag.
    pub dag_digest: Hash32,
}

/// `run.json`: effective scenario, outcome, and anything that went wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub validators: ValidatorSet,
    pub reference_node: ValidatorId,
    pub metrics: Metrics,
    pub nodes: Vec<NodeReport>,
    pub forks: Vec<ForkRecord>,
    pub violations: Vec<String>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub report: RunReport,
    /// Chain transcript per node, by node id.
    pub chains: Vec<String>,
    /// Reference node's events over all epochs.
    pub events: Vec<EventRecord>,
    /// Election traces per node; empty unless tracing was requested.
    pub election: Vec<Vec<VoteRecord>>,
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

impl RunOutput {
    pub fn has_violations(&self) -> bool {
        !self.report.violations.is_empty()
    }

    /// Writes every artifact under `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let s = &self.report.scenario;
        let mut csv = String::from(Metrics::CSV_HEADER);
        csv.push('\n');
        csv.push_str(&self.metrics.csv_row(s.seed, s.nodes(), s.duration as f64 / 1e9));
        csv.push('\n');
        fs::write(dir.join("metrics.csv"), csv)?;
        for (i, chain) in self.chains.iter().enumerate() {
            fs::write(dir.join(format!("chain-{i}.jsonl")), chain)?;
        }
        fs::write(dir.join("events.jsonl"), jsonl(&self.events))?;
        fs::write(dir.join("forks.jsonl"), jsonl(&self.report.forks))?;
        let mut run = serde_json::to_string_pretty(&self.report).expect("report serializes");
        run.push('\n');
        fs::write(dir.join("run.json"), run)?;
        fs::write(dir.join("dag.dot"), crate::export::events_to_dot(&self.events))?;
        for (i, trace) in self.election.iter().enumerate() {
            if !trace.is_empty() {
                fs::write(dir.join(format!("election-{i}.jsonl")), jsonl(trace))?;
            }
        }
        Ok(())
    }
}
