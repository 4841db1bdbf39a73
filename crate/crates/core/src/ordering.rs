//! Final ordering: median time, block peeling and the main chain.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::FrameIndex;
use crate::dag::{Dag, DagError, EventIdx};
use crate::layering::LayerMap;
use crate::stake::ValidatorSet;
use crate::types::{hex_bytes_list, EventId, Hash32, Nanos, ValidatorId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingError {
    #[error("atropos {0:?} is already part of a block")]
    AtroposAlreadyBlocked(EventId),
    #[error("unknown event {0:?}")]
    UnknownEvent(EventId),
    #[error("event {0:?} has no layer")]
    MissingLayer(EventId),
}

impl From<DagError> for OrderingError {
    fn from(e: DagError) -> Self {
        match e {
            DagError::UnknownEvent(id) => OrderingError::UnknownEvent(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub epoch: u64,
    pub frame: u64,
    pub atropos: EventId,
    pub events: Vec<EventId>,
    pub consensus_time: Nanos,
    /// Payloads of the block's events in event order; events of creators
    /// with a fork among finalized events contribute nothing.
    #[serde(with = "hex_bytes_list")]
    pub transactions: Vec<Vec<u8>>,
    /// Creators whose transactions were withheld from this block.
    pub cheaters: Vec<ValidatorId>,
    pub parent: Hash32,
    pub digest: Hash32,
}

/// Digest over index, atropos, ordered event ids, consensus time and parent digest.
pub fn block_digest(
    index: u64,
    atropos: &EventId,
    events: &[EventId],
    consensus_time: Nanos,
    parent: &Hash32,
) -> Hash32 {
    let mut buf = Vec::with_capacity(8 + 32 + 4 + 32 * events.len() + 8 + 32);
    buf.extend_from_slice(&index.to_be_bytes());
    buf.extend_from_slice(atropos.as_bytes());
    buf.extend_from_slice(&(events.len() as u32).to_be_bytes());
    for e in events {
        buf.extend_from_slice(e.as_bytes());
    }
    buf.extend_from_slice(&consensus_time.to_be_bytes());
    buf.extend_from_slice(parent.as_bytes());
    Hash32::digest_of(&[&buf])
}

impl Block {
    pub fn verify_digest(&self) -> bool {
        self.digest
            == block_digest(
                self.index,
                &self.atropos,
                &self.events,
                self.consensus_time,
                &self.parent,
            )
    }
}

#[derive(Debug, Clone, Default)]
pub struct MainChain {
    blocks: Vec<Block>,
    included: HashSet<EventId>,
    /// Creators with both halves of some fork pair among finalized events.
    finalized_cheaters: BTreeSet<ValidatorId>,
    time_regressions: u64,
}

impl MainChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn last(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn head_digest(&self) -> Hash32 {
        self.blocks.last().map_or(Hash32::ZERO, |b| b.digest)
    }

    pub fn contains_event(&self, id: &EventId) -> bool {
        self.included.contains(id)
    }

    /// Blocks whose consensus time went below the previous block's.
    pub fn time_regressions(&self) -> u64 {
        self.time_regressions
    }

    pub fn finalized_cheaters(&self) -> &BTreeSet<ValidatorId> {
        &self.finalized_cheaters
    }

    /// One JSON object per line, newline-terminated.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&serde_json::to_string(b).expect("blocks serialize"));
            out.push('\n');
        }
        out
    }
}

/// Smallest time whose cumulative weight strictly exceeds half the total.
pub fn weighted_median(samples: &mut [(Nanos, u64)]) -> Option<Nanos> {
    samples.sort_unstable();
    let total: u128 = samples.iter().map(|s| s.1 as u128).sum();
    if total == 0 {
        return None;
    }
    let mut acc: u128 = 0;
    for &(t, w) in samples.iter() {
        acc += w as u128;
        if 2 * acc > total {
            return Some(t);
        }
    }
    None
}

pub fn median_time(dag: &Dag, e: &EventId, vs: &ValidatorSet) -> Result<Nanos, DagError> {
    Ok(median_time_idx(dag, dag.resolve(e)?, vs))
}

/// Stake-weighted median over the creation times of each non-cheating
/// validator's highest event in the subgraph of `e`.
pub fn median_time_idx(dag: &Dag, e: EventIdx, vs: &ValidatorSet) -> Nanos {
    let mut samples: Vec<(Nanos, u64)> = vs
        .powers()
        .iter()
        .filter(|(v, _)| !dag.observes_fork(e, **v))
        .filter_map(|(v, w)| {
            dag.highest_observed(e, *v)
                .map(|h| (dag.event(h).creation_time, *w))
        })
        .collect();
    weighted_median(&mut samples).unwrap_or(dag.event(e).creation_time)
}

fn lamport_then_id(dag: &Dag, a: EventIdx, b: EventIdx) -> Ordering {
    dag.event(a)
        .lamport
        .cmp(&dag.event(b).lamport)
        .then_with(|| dag.id(a).cmp(&dag.id(b)))
}

pub fn make_block(
    chain: &mut MainChain,
    dag: &Dag,
    atropos: &EventId,
    vs: &ValidatorSet,
) -> Result<Block, OrderingError> {
    let a = dag.resolve(atropos)?;
    make_block_at(chain, dag, a, 0, vs)
}

/// Appends the block of the Atropos `a` (decided for `frame`) to the chain.
pub fn make_block_at(
    chain: &mut MainChain,
    dag: &Dag,
    a: EventIdx,
    frame: u64,
    vs: &ValidatorSet,
) -> Result<Block, OrderingError> {
    let atropos = dag.id(a);
    if chain.included.contains(&atropos) {
        return Err(OrderingError::AtroposAlreadyBlocked(atropos));
    }
    let mut fresh: Vec<EventIdx> = dag
        .subgraph_idx(a)
        .filter(|&i| !chain.included.contains(&dag.id(i)))
        .collect();
    fresh.sort_by(|&x, &y| lamport_then_id(dag, x, y));
    let events: Vec<EventId> = fresh.iter().map(|&i| dag.id(i)).collect();

    for &i in &fresh {
        chain.included.insert(dag.id(i));
    }
    for &c in dag.cheaters() {
        if chain.finalized_cheaters.contains(&c) {
            continue;
        }
        let both_final = dag.fork_pairs_of(c).iter().any(|&(x, y)| {
            chain.included.contains(&dag.id(x)) && chain.included.contains(&dag.id(y))
        });
        if both_final {
            chain.finalized_cheaters.insert(c);
        }
    }

    let mut transactions = Vec::new();
    let mut withheld = BTreeSet::new();
    for &i in &fresh {
        let e = dag.event(i);
        if chain.finalized_cheaters.contains(&e.creator) {
            withheld.insert(e.creator);
            continue;
        }
        transactions.extend(e.transactions.iter().cloned());
    }

    let consensus_time = median_time_idx(dag, a, vs);
    if chain
        .blocks
        .last()
        .is_some_and(|b| b.consensus_time > consensus_time)
    {
        chain.time_regressions += 1;
        tracing::debug!(atropos = %atropos.short(), "consensus time regressed");
    }
    let index = chain.blocks.len() as u64 + 1;
    let parent = chain.head_digest();
    let digest = block_digest(index, &atropos, &events, consensus_time, &parent);
    let block = Block {
        index,
        epoch: dag.epoch(),
        frame,
        atropos,
        events,
        consensus_time,
        transactions,
        cheaters: withheld.into_iter().collect(),
        parent,
        digest,
    };
    chain.blocks.push(block.clone());
    Ok(block)
}

/// Orders the subgraphs of `atropoi` by (layer, lamport, id), each event
/// emitted once under the first Atropos that reaches it. Atropoi themselves
/// are processed in the same order.
pub fn topo_sort_layered(
    dag: &Dag,
    atropoi: &[EventId],
    layers: &LayerMap,
) -> Result<Vec<EventId>, OrderingError> {
    let key = |id: &EventId| -> Result<(u64, u64, EventId), OrderingError> {
        let e = dag.get(id).ok_or(OrderingError::UnknownEvent(*id))?;
        let l = layers.get(id).ok_or(OrderingError::MissingLayer(*id))?;
        Ok((l, e.lamport, *id))
    };
    let mut sorted = atropoi
        .iter()
        .map(|a| key(a).map(|k| (k, *a)))
        .collect::<Result<Vec<_>, _>>()?;
    sorted.sort();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (_, a) in sorted {
        let mut group = Vec::new();
        for id in dag.subgraph(&a)? {
            if seen.insert(id) {
                group.push((key(&id)?, id));
            }
        }
        group.sort();
        out.extend(group.into_iter().map(|(_, id)| id));
    }
    Ok(out)
}

/// Sum of creator powers over the roots in the subgraph of `e`.
pub fn validation_score(
    dag: &Dag,
    e: &EventId,
    frames: &FrameIndex,
    vs: &ValidatorSet,
) -> Result<u64, DagError> {
    let idx = dag.resolve(e)?;
    Ok(dag
        .subgraph_idx(idx)
        .filter(|&i| frames.is_root(i))
        .map(|i| vs.power(dag.event(i).creator))
        .sum())
}
