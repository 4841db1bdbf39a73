use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub blocks_finalized: u64,
    pub transactions_executed: u64,
    pub events_emitted: u64,
    /// Mean seconds from emission to finality, over honest nodes' own events.
    pub avg_ttf: f64,
    /// Finalized transactions per simulated second.
    pub avg_tps: f64,
}

impl Metrics {
    pub const CSV_HEADER: &'static str =
        "seed,nodes,duration_s,blocks_finalized,transactions_executed,events_emitted,avg_ttf,avg_tps";

    pub fn csv_row(&self, seed: u64, nodes: usize, duration_s: f64) -> String {
        format!(
            "{seed},{nodes},{duration_s},{},{},{},{:.6},{:.6}",
            self.blocks_finalized, self.transactions_executed, self.events_emitted, self.avg_ttf, self.avg_tps
        )
    }
}

/// Running sum of time-to-finality samples in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtfAccumulator {
    pub total_ns: i128,
    pub samples: u64,
}

impl TtfAccumulator {
    pub fn add(&mut self, ns: i64) {
        self.total_ns += ns.max(0) as i128;
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &TtfAccumulator) {
        self.total_ns += other.total_ns;
        self.samples += other.samples;
    }

    pub fn mean_secs(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.total_ns as f64 / self.samples as f64 / 1e9
        }
    }
}
