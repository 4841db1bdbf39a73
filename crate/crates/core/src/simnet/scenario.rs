//! Scenario files: network shape, latency, faults and workload of one run.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::peer::PeerStrategy;
use crate::stake::StakeChange;
use crate::types::{Nanos, ValidatorId};

pub const SECOND: Nanos = 1_000_000_000;
pub const MILLI: Nanos = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {field}: {reason}")]
    InvalidScenario { field: &'static str, reason: String },
    #[error("unknown node {node} in {field}")]
    UnknownNode { field: &'static str, node: u32 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidScenario {
        field,
        reason: reason.into(),
    }
}

/// Durations are written as humantime strings (`"150ms"`, `"-2s"`) or raw
/// nanosecond integers.
pub mod dur {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn parse(s: &str) -> Result<Nanos, String> {
        let s = s.trim();
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let d = humantime::parse_duration(body).map_err(|e| format!("{s:?}: {e}"))?;
        let n = i64::try_from(d.as_nanos()).map_err(|_| format!("{s:?} overflows"))?;
        Ok(if neg { -n } else { n })
    }

    pub fn format(n: Nanos) -> String {
        let d = humantime::format_duration(Duration::from_nanos(n.unsigned_abs())).to_string();
        if n < 0 {
            format!("-{d}")
        } else {
            d
        }
    }

    pub fn serialize<S: Serializer>(n: &Nanos, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(*n))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Nanos, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(n) => Ok(n),
            Raw::Text(t) => parse(&t).map_err(D::Error::custom),
        }
    }

    pub mod map {
        use super::*;

        pub fn serialize<S: Serializer>(m: &BTreeMap<u32, Nanos>, s: S) -> Result<S::Ok, S::Error> {
            let text: BTreeMap<String, String> =
                m.iter().map(|(k, v)| (k.to_string(), format(*v))).collect();
            text.serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, Nanos>, D::Error> {
            let raw: BTreeMap<String, Raw> = BTreeMap::deserialize(d)?;
            raw.into_iter()
                .map(|(k, v)| {
                    let k = k.parse::<u32>().map_err(D::Error::custom)?;
                    let v = match v {
                        Raw::Int(n) => n,
                        Raw::Text(t) => parse(&t).map_err(D::Error::custom)?,
                    };
                    Ok((k, v))
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeavyTail {
    /// Chance per message of an extra delay.
    pub prob: f64,
    #[serde(with = "dur")]
    pub max_extra: Nanos,
}

/// Per-link delay: uniform in `[base, base + jitter]`, plus an optional tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyModel {
    #[serde(with = "dur")]
    pub base: Nanos,
    #[serde(with = "dur")]
    pub jitter: Nanos,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heavy_tail: Option<HeavyTail>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            base: 20 * MILLI,
            jitter: 60 * MILLI,
            heavy_tail: None,
        }
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        LatencyModel {
            base: 0,
            jitter: 0,
            heavy_tail: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fault {
    /// The node equivocates once at `at`.
    Fork {
        node: u32,
        #[serde(with = "dur")]
        at: Nanos,
    },
    /// Neither sends nor receives in `[from, to)`.
    Offline {
        node: u32,
        #[serde(with = "dur")]
        from: Nanos,
        #[serde(with = "dur")]
        to: Nanos,
    },
    /// Uniform extra delay on every link touching one of `nodes`.
    ExtraLatency {
        nodes: Vec<u32>,
        #[serde(with = "dur")]
        min: Nanos,
        #[serde(with = "dur")]
        max: Nanos,
    },
}

/// A stake change requested during `epoch`, applied by the seal rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledStakeChange {
    pub epoch: u64,
    pub validator: u32,
    pub change: StakeChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    /// Validating power per node; node `i` is validator `i`.
    pub stakes: Vec<u64>,
    /// Maximum parents per event.
    pub k: usize,
    #[serde(with = "dur")]
    pub emission_interval: Nanos,
    pub latency: LatencyModel,
    #[serde(with = "dur")]
    pub duration: Nanos,
    pub faults: Vec<Fault>,
    pub peer_strategy: PeerStrategy,
    /// Transactions per simulated second, spread round-robin over nodes.
    pub tx_rate: f64,
    pub tx_size: usize,
    /// Frames per epoch; 0 keeps one epoch for the whole run.
    pub epoch_len: u64,
    pub withdrawal_delay_epochs: u64,
    pub stake_changes: Vec<ScheduledStakeChange>,
    #[serde(with = "dur")]
    pub check_interval: Nanos,
    pub trace_election: bool,
    #[serde(with = "dur::map")]
    pub clock_skew: BTreeMap<u32, Nanos>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 1,
            stakes: vec![1; 4],
            k: 3,
            emission_interval: 100 * MILLI,
            latency: LatencyModel::default(),
            duration: 10 * SECOND,
            faults: Vec::new(),
            peer_strategy: PeerStrategy::Random,
            tx_rate: 50.0,
            tx_size: 32,
            epoch_len: 100,
            withdrawal_delay_epochs: 1,
            stake_changes: Vec::new(),
            check_interval: SECOND,
            trace_election: false,
            clock_skew: BTreeMap::new(),
        }
    }
}

impl Scenario {
    /// `n` unit-stake nodes, default everything else.
    pub fn uniform(n: usize, seed: u64) -> Self {
        Scenario {
            seed,
            stakes: vec![1; n],
            ..Scenario::default()
        }
    }

    pub fn nodes(&self) -> usize {
        self.stakes.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = ValidatorId> {
        (0..self.stakes.len() as u32).map(ValidatorId)
    }

    pub fn from_json(text: &str) -> Result<Scenario, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let n = self.nodes() as u32;
        if n == 0 {
            return Err(invalid("nodes", "at least one node is required"));
        }
        if self.stakes.iter().all(|&s| s == 0) {
            return Err(invalid("stakes", "total stake is zero"));
        }
        if self.k < 1 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.duration < 0 {
            return Err(invalid("duration", "must not be negative"));
        }
        if self.emission_interval <= 0 {
            return Err(invalid("emission_interval", "must be positive"));
        }
        if self.check_interval <= 0 {
            return Err(invalid("check_interval", "must be positive"));
        }
        if self.latency.base < 0 || self.latency.jitter < 0 {
            return Err(invalid("latency", "delays must not be negative"));
        }
        if let Some(t) = &self.latency.heavy_tail {
            if !(0.0..=1.0).contains(&t.prob) || t.max_extra < 0 {
                return Err(invalid("latency", "heavy tail needs prob in [0, 1] and max_extra >= 0"));
            }
        }
        if !self.tx_rate.is_finite() || self.tx_rate < 0.0 {
            return Err(invalid("tx_rate", "must be a non-negative number"));
        }
        let check = |field: &'static str, node: u32| {
            if node < n {
                Ok(())
            } else {
                Err(ScenarioError::UnknownNode { field, node })
            }
        };
        for f in &self.faults {
            match f {
                Fault::Fork { node, .. } => check("faults", *node)?,
                Fault::Offline { node, from, to } => {
                    check("faults", *node)?;
                    if to < from {
                        return Err(invalid("faults", "offline window ends before it starts"));
                    }
                }
                Fault::ExtraLatency { nodes, min, max } => {
                    for &v in nodes {
                        check("faults", v)?;
                    }
                    if *min < 0 || max < min {
                        return Err(invalid("faults", "extra latency needs 0 <= min <= max"));
                    }
                }
            }
        }
        for c in &self.stake_changes {
            check("stake_changes", c.validator)?;
        }
        for &node in self.clock_skew.keys() {
            check("clock_skew", node)?;
        }
        Ok(())
    }

    /// Nodes that equivocate at some point.
    pub fn forkers(&self) -> Vec<ValidatorId> {
        let mut v: Vec<ValidatorId> = self
            .faults
            .iter()
            .filter_map(|f| match f {
                Fault::Fork { node, .. } => Some(ValidatorId(*node)),
                _ => None,
            })
            .collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn is_offline(&self, node: ValidatorId, now: Nanos) -> bool {
        self.faults.iter().any(|f| {
            matches!(f, Fault::Offline { node: n, from, to } if *n == node.0 && *from <= now && now < *to)
        })
    }

    /// Nodes touched by any fault and therefore unfit as the reference node.
    pub fn faulty(&self) -> Vec<ValidatorId> {
        let mut v: Vec<ValidatorId> = Vec::new();
        for f in &self.faults {
            match f {
                Fault::Fork { node, .. } | Fault::Offline { node, .. } => v.push(ValidatorId(*node)),
                Fault::ExtraLatency { .. } => {}
            }
        }
        v.sort();
        v.dedup();
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn durations_parse_both_forms() {
        let s = Scenario::from_json(
            r#"{"stakes":[1,1],"emission_interval":"150ms","duration":2000000000,
                "clock_skew":{"1":"-5ms"},
                "faults":[{"kind":"offline","node":1,"from":"1s","to":"2s"}]}"#,
        )
        .unwrap();
        assert_eq!(s.emission_interval, 150 * MILLI);
        assert_eq!(s.duration, 2 * SECOND);
        assert_eq!(s.clock_skew[&1], -5 * MILLI);
        assert!(s.is_offline(ValidatorId(1), SECOND));
        assert!(!s.is_offline(ValidatorId(1), 2 * SECOND));
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn validation_names_the_field() {
        let s = Scenario {
            stakes: vec![],
            ..Scenario::default()
        };
        assert!(matches!(s.validate(), Err(ScenarioError::InvalidScenario { field: "nodes", .. })));
        let s = Scenario {
            k: 0,
            ..Scenario::default()
        };
        assert!(matches!(s.validate(), Err(ScenarioError::InvalidScenario { field: "k", .. })));
        let s = Scenario {
            faults: vec![Fault::Fork { node: 9, at: 0 }],
            ..Scenario::default()
        };
        assert_eq!(s.validate(), Err(ScenarioError::UnknownNode { field: "faults", node: 9 }));
        assert_eq!(Scenario::default().validate(), Ok(()));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = Scenario::from_json(r#"{"nodez": 3}"#).unwrap_err();
        assert!(err.to_string().contains("nodez"));
    }
}
