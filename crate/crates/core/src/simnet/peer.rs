//! Peer selection for event sync.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stake::ValidatorSet;
use crate::types::ValidatorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerStrategy {
    #[default]
    Random,
    LeastUsed,
    MostUsed,
    /// Uniform among the least used peers, keeping counts level.
    Fair,
    /// Probability proportional to validating power.
    StakeBased,
    /// Minimum of `w / (1 + f)`.
    Lowest,
    /// Maximum of `w / (1 + f)`.
    Highest,
    /// Probability proportional to `w / (1 + f)`.
    Balanced,
}

impl std::str::FromStr for PeerStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| format!("unknown peer strategy {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PeerError {
    #[error("no peer to select")]
    NoPeers,
}

/// How often each peer has been selected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeerBook {
    freq: BTreeMap<ValidatorId, u64>,
}

impl PeerBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self, p: ValidatorId) -> u64 {
        self.freq.get(&p).copied().unwrap_or(0)
    }

    pub fn record(&mut self, p: ValidatorId) {
        *self.freq.entry(p).or_default() += 1;
    }

    pub fn counts(&self) -> &BTreeMap<ValidatorId, u64> {
        &self.freq
    }
}

fn alpha(w: u64, f: u64) -> f64 {
    w as f64 / (1.0 + f as f64)
}

fn weighted<R: Rng>(peers: &[ValidatorId], weights: &[f64], rng: &mut R) -> ValidatorId {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return peers[rng.gen_range(0..peers.len())];
    }
    let mut x = rng.gen_range(0.0..total);
    for (p, w) in peers.iter().zip(weights) {
        if x < *w {
            return *p;
        }
        x -= w;
    }
    *peers.last().expect("non-empty")
}

/// Picks a sync partner for `me` among `nodes` (never `me`). Ties go to the
/// lowest id. Does not update the book.
pub fn select_peer<R: Rng>(
    me: ValidatorId,
    nodes: &[ValidatorId],
    book: &PeerBook,
    strategy: PeerStrategy,
    vs: &ValidatorSet,
    rng: &mut R,
) -> Result<ValidatorId, PeerError> {
    let mut peers: Vec<ValidatorId> = nodes.iter().copied().filter(|&p| p != me).collect();
    peers.sort();
    peers.dedup();
    if peers.is_empty() {
        return Err(PeerError::NoPeers);
    }
    let by_key = |key: &dyn Fn(ValidatorId) -> f64, max: bool| -> ValidatorId {
        let mut best = peers[0];
        let mut best_k = key(best);
        for &p in &peers[1..] {
            let k = key(p);
            if (max && k > best_k) || (!max && k < best_k) {
                best = p;
                best_k = k;
            }
        }
        best
    };
    let peer = match strategy {
        PeerStrategy::Random => peers[rng.gen_range(0..peers.len())],
        PeerStrategy::LeastUsed => by_key(&|p| book.count(p) as f64, false),
        PeerStrategy::MostUsed => by_key(&|p| book.count(p) as f64, true),
        PeerStrategy::Fair => {
            let min = peers.iter().map(|&p| book.count(p)).min().expect("non-empty");
            let least: Vec<ValidatorId> = peers.iter().copied().filter(|&p| book.count(p) == min).collect();
            least[rng.gen_range(0..least.len())]
        }
        PeerStrategy::StakeBased => {
            let w: Vec<f64> = peers.iter().map(|&p| vs.power(p) as f64).collect();
            weighted(&peers, &w, rng)
        }
        PeerStrategy::Lowest => by_key(&|p| alpha(vs.power(p), book.count(p)), false),
        PeerStrategy::Highest => by_key(&|p| alpha(vs.power(p), book.count(p)), true),
        PeerStrategy::Balanced => {
            let w: Vec<f64> = peers.iter().map(|&p| alpha(vs.power(p), book.count(p))).collect();
            weighted(&peers, &w, rng)
        }
    };
    Ok(peer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ALL: [PeerStrategy; 8] = [
        PeerStrategy::Random,
        PeerStrategy::LeastUsed,
        PeerStrategy::MostUsed,
        PeerStrategy::Fair,
        PeerStrategy::StakeBased,
        PeerStrategy::Lowest,
        PeerStrategy::Highest,
        PeerStrategy::Balanced,
    ];

    fn ids(n: u32) -> Vec<ValidatorId> {
        (0..n).map(ValidatorId).collect()
    }

    #[test]
    fn two_nodes_always_pick_the_other() {
        let vs = ValidatorSet::uniform(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in ALL {
            for _ in 0..20 {
                let p = select_peer(ValidatorId(0), &ids(2), &PeerBook::new(), s, &vs, &mut rng).unwrap();
                assert_eq!(p, ValidatorId(1), "{s:?}");
            }
        }
    }

    #[test]
    fn lone_node_has_no_peers() {
        let vs = ValidatorSet::uniform(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            select_peer(ValidatorId(0), &ids(1), &PeerBook::new(), PeerStrategy::Random, &vs, &mut rng),
            Err(PeerError::NoPeers)
        );
    }

    #[test]
    fn least_and_most_used() {
        // A, B, C = 1, 2, 3; the selecting node is 0.
        let vs = ValidatorSet::uniform(4).unwrap();
        let mut book = PeerBook::new();
        for _ in 0..3 {
            book.record(ValidatorId(1));
        }
        book.record(ValidatorId(2));
        book.record(ValidatorId(3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pick = |s, rng: &mut ChaCha8Rng| select_peer(ValidatorId(0), &ids(4), &book, s, &vs, rng).unwrap();
        assert_eq!(pick(PeerStrategy::LeastUsed, &mut rng), ValidatorId(2));
        assert_eq!(pick(PeerStrategy::MostUsed, &mut rng), ValidatorId(1));
        for _ in 0..20 {
            assert_ne!(pick(PeerStrategy::Fair, &mut rng), ValidatorId(1));
        }
        // alpha = 1/4, 1/2, 1/2
        assert_eq!(pick(PeerStrategy::Lowest, &mut rng), ValidatorId(1));
        assert_eq!(pick(PeerStrategy::Highest, &mut rng), ValidatorId(2));
    }

    #[test]
    fn stake_based_follows_weights() {
        let vs = ValidatorSet::from_powers([(ValidatorId(0), 1), (ValidatorId(1), 3), (ValidatorId(2), 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let book = PeerBook::new();
        let heavy = (0..10_000)
            .filter(|_| {
                select_peer(ValidatorId(0), &ids(3), &book, PeerStrategy::StakeBased, &vs, &mut rng).unwrap()
                    == ValidatorId(1)
            })
            .count();
        assert!((7_000..=8_000).contains(&heavy), "{heavy}");
    }

    #[test]
    fn never_self() {
        let vs = ValidatorSet::uniform(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut book = PeerBook::new();
        for s in ALL {
            for i in 0..50 {
                let me = ValidatorId(i % 5);
                let p = select_peer(me, &ids(5), &book, s, &vs, &mut rng).unwrap();
                assert_ne!(p, me);
                book.record(p);
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("stake-based".parse::<PeerStrategy>(), Ok(PeerStrategy::StakeBased));
        assert_eq!("least_used".parse::<PeerStrategy>(), Ok(PeerStrategy::LeastUsed));
        assert!("nope".parse::<PeerStrategy>().is_err());
    }
}
