//! The per-node append-only event store.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::event::{transactions_digest, Event, SimSigner, Verifier};
use crate::types::{EventId, Nanos, ValidatorId};

/// Position of an event in one node's store. Local to that store: two nodes
/// holding the same event generally give it different indices.
pub type EventIdx = usize;

/// Default bound on how far a creation time may run ahead of the local clock.
pub const DEFAULT_MAX_FUTURE_DRIFT: Nanos = 10_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagConfig {
    pub epoch: u64,
    /// Maximum number of parents per event (`k`).
    pub max_parents: usize,
    pub max_future_drift: Nanos,
}

impl Default for DagConfig {
    fn default() -> Self {
        DagConfig {
            epoch: 1,
            max_parents: 2,
            max_future_drift: DEFAULT_MAX_FUTURE_DRIFT,
        }
    }
}

/// Two events by the same creator, neither a self-ancestor of the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ForkPair {
    pub a: EventId,
    pub b: EventId,
    pub creator: ValidatorId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InsertError {
    #[error("event {event:?} references unknown parent {parent:?}")]
    MissingParent { event: EventId, parent: EventId },
    #[error("event {0:?} is already stored")]
    DuplicateEvent(EventId),
    #[error("bad seq: {0}")]
    BadSeq(String),
    #[error("declared lamport {declared} but parents imply {expected}")]
    BadLamport { declared: u64, expected: u64 },
    #[error("{count} parents exceed the limit of {max}")]
    TooManyParents { count: usize, max: usize },
    #[error("parent {0:?} listed twice")]
    DuplicateParent(EventId),
    #[error("creation time {time} is below self-parent time {parent_time}")]
    TimeRegression { time: Nanos, parent_time: Nanos },
    #[error("creation time {time} is too far ahead of local clock {now}")]
    TooFarInFuture { time: Nanos, now: Nanos },
    #[error("event epoch {got} does not match store epoch {expected}")]
    WrongEpoch { got: u64, expected: u64 },
    #[error("transaction digest does not match payload")]
    BadTxHash,
    #[error("signature does not match creator and digest")]
    BadSignature,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("unknown event {0:?}")]
    UnknownEvent(EventId),
}

/// Successful insertion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inserted {
    pub idx: EventIdx,
    pub id: EventId,
    pub forks: Vec<ForkPair>,
}

#[derive(Debug, Clone)]
pub(crate) struct Stored {
    pub(crate) event: Event,
    pub(crate) id: EventId,
    /// Bit set of every event in the subgraph, including itself.
    ancestry: FixedBitSet,
    /// Highest-seq event per creator slot inside the subgraph.
    highest: Vec<Option<EventIdx>>,
    /// Creators with a fork pair inside the subgraph (sorted).
    forkers: Vec<ValidatorId>,
}

/// One node's OPERA DAG. Single writer, no interior locking.
#[derive(Debug, Clone)]
pub struct Dag {
    config: DagConfig,
    events: Vec<Stored>,
    index: HashMap<EventId, EventIdx>,
    children: Vec<Vec<EventIdx>>,
    creator_slot: HashMap<ValidatorId, usize>,
    creators: Vec<ValidatorId>,
    by_creator: Vec<Vec<EventIdx>>,
    tops: BTreeMap<ValidatorId, BTreeSet<EventIdx>>,
    cheaters: BTreeSet<ValidatorId>,
    forks: Vec<ForkPair>,
    fork_idx: HashMap<ValidatorId, Vec<(EventIdx, EventIdx)>>,
}

impl Dag {
    pub fn new(config: DagConfig) -> Self {
        Dag {
            config,
            events: Vec::new(),
            index: HashMap::new(),
            children: Vec::new(),
            creator_slot: HashMap::new(),
            creators: Vec::new(),
            by_creator: Vec::new(),
            tops: BTreeMap::new(),
            cheaters: BTreeSet::new(),
            forks: Vec::new(),
            fork_idx: HashMap::new(),
        }
    }

    pub fn config(&self) -> &DagConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.config.epoch
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn contains(&self, id: &EventId) -> bool {
        self.index.contains_key(id)
    }

    pub fn idx_of(&self, id: &EventId) -> Option<EventIdx> {
        self.index.get(id).copied()
    }

    pub fn resolve(&self, id: &EventId) -> Result<EventIdx, DagError> {
        self.idx_of(id).ok_or(DagError::UnknownEvent(*id))
    }

    pub fn get(&self, id: &EventId) -> Option<&Event> {
        self.idx_of(id).map(|i| &self.events[i].event)
    }

    pub fn event(&self, idx: EventIdx) -> &Event {
        &self.events[idx].event
    }

    pub fn id(&self, idx: EventIdx) -> EventId {
        self.events[idx].id
    }

    /// Events in insertion order, which is always a topological order.
    pub fn iter(&self) -> impl Iterator<Item = (EventIdx, &EventId, &Event)> + '_ {
        self.events
            .iter()
            .enumerate()
            .map(|(i, s)| (i, &s.id, &s.event))
    }

    pub fn parents_idx(&self, idx: EventIdx) -> impl Iterator<Item = EventIdx> + '_ {
        self.events[idx].event.parents.iter().map(|p| self.index[p])
    }

    pub fn children(&self, idx: EventIdx) -> &[EventIdx] {
        &self.children[idx]
    }

    pub fn cheaters(&self) -> &BTreeSet<ValidatorId> {
        &self.cheaters
    }

    pub fn forks(&self) -> &[ForkPair] {
        &self.forks
    }

    /// Fork pairs of one creator, as store indices.
    pub fn fork_pairs_of(&self, creator: ValidatorId) -> &[(EventIdx, EventIdx)] {
        self.fork_idx.get(&creator).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Per-creator count of stored events (the height vector).
    pub fn heights(&self) -> BTreeMap<ValidatorId, u64> {
        self.creators
            .iter()
            .zip(&self.by_creator)
            .map(|(c, evs)| (*c, evs.len() as u64))
            .collect()
    }

    /// Stored events of `creator` in local arrival order.
    pub fn events_by(&self, creator: ValidatorId) -> &[EventIdx] {
        self.creator_slot
            .get(&creator)
            .map(|&s| self.by_creator[s].as_slice())
            .unwrap_or(&[])
    }

    /// Events of `creator` that no stored event references.
    pub fn top_events(&self, creator: ValidatorId) -> impl Iterator<Item = EventIdx> + '_ {
        self.tops.get(&creator).into_iter().flatten().copied()
    }

    /// The creator's top event with the highest seq (lowest id on ties).
    pub fn latest_top(&self, creator: ValidatorId) -> Option<EventIdx> {
        self.top_events(creator).max_by(|&a, &b| {
            let (ea, eb) = (self.event(a), self.event(b));
            ea.seq.cmp(&eb.seq).then_with(|| self.id(b).cmp(&self.id(a)))
        })
    }

    pub fn creators(&self) -> &[ValidatorId] {
        &self.creators
    }

    /// `x` is in the subgraph of `y` (reflexive).
    pub fn is_ancestor_or_self(&self, x: EventIdx, y: EventIdx) -> bool {
        self.events[y].ancestry.contains(x)
    }

    pub fn ancestry(&self, idx: EventIdx) -> &FixedBitSet {
        &self.events[idx].ancestry
    }

    /// All store indices in the subgraph of `idx`, ascending.
    pub fn subgraph_idx(&self, idx: EventIdx) -> impl Iterator<Item = EventIdx> + '_ {
        self.events[idx].ancestry.ones()
    }

    /// Highest-seq event of `creator` inside the subgraph of `idx`.
    pub fn highest_observed(&self, idx: EventIdx, creator: ValidatorId) -> Option<EventIdx> {
        let slot = *self.creator_slot.get(&creator)?;
        self.events[idx].highest.get(slot).copied().flatten()
    }

    /// `creator` has a fork pair inside the subgraph of `idx`.
    pub fn observes_fork(&self, idx: EventIdx, creator: ValidatorId) -> bool {
        self.events[idx].forkers.binary_search(&creator).is_ok()
    }

    pub fn observed_forkers(&self, idx: EventIdx) -> &[ValidatorId] {
        &self.events[idx].forkers
    }

    /// Strict happened-before: `x` is a proper ancestor of `y`.
    pub fn happened_before(&self, x: &EventId, y: &EventId) -> Result<bool, DagError> {
        let xi = self.resolve(x)?;
        let yi = self.resolve(y)?;
        Ok(xi != yi && self.is_ancestor_or_self(xi, yi))
    }

    /// `{v}` together with all of its ancestors.
    pub fn subgraph(&self, v: &EventId) -> Result<BTreeSet<EventId>, DagError> {
        let vi = self.resolve(v)?;
        Ok(self.subgraph_idx(vi).map(|i| self.events[i].id).collect())
    }

    /// Events the remote side is missing according to its height vector, in
    /// an order where parents precede children.
    pub fn diff_known(&self, remote_heights: &BTreeMap<ValidatorId, u64>) -> Vec<Event> {
        let mut picked: Vec<EventIdx> = Vec::new();
        for (creator, evs) in self.creators.iter().zip(&self.by_creator) {
            let known = remote_heights.get(creator).copied().unwrap_or(0) as usize;
            if known < evs.len() {
                picked.extend_from_slice(&evs[known..]);
            }
        }
        picked.sort_unstable();
        picked.into_iter().map(|i| self.events[i].event.clone()).collect()
    }

    /// Validate and store without a clock (no future-drift guard).
    pub fn insert(&mut self, e: Event) -> Result<Inserted, InsertError> {
        self.insert_checked(e, None)
    }

    /// Validate and store, rejecting events too far ahead of `now`.
    pub fn insert_at(&mut self, e: Event, now: Nanos) -> Result<Inserted, InsertError> {
        self.insert_checked(e, Some(now))
    }

    fn insert_checked(&mut self, e: Event, now: Option<Nanos>) -> Result<Inserted, InsertError> {
        let id = e.id();
        if self.index.contains_key(&id) {
            return Err(InsertError::DuplicateEvent(id));
        }
        if e.epoch != self.config.epoch {
            return Err(InsertError::WrongEpoch {
                got: e.epoch,
                expected: self.config.epoch,
            });
        }
        if e.parents.len() > self.config.max_parents {
            return Err(InsertError::TooManyParents {
                count: e.parents.len(),
                max: self.config.max_parents,
            });
        }
        if transactions_digest(&e.transactions) != e.tx_hash {
            return Err(InsertError::BadTxHash);
        }
        if !SimSigner.verify(e.creator, &id, &e.sig) {
            return Err(InsertError::BadSignature);
        }
        let mut parent_idx = Vec::with_capacity(e.parents.len());
        for p in &e.parents {
            let pi = *self.index.get(p).ok_or(InsertError::MissingParent {
                event: id,
                parent: *p,
            })?;
            if parent_idx.contains(&pi) {
                return Err(InsertError::DuplicateParent(*p));
            }
            parent_idx.push(pi);
        }
        self.check_seq(&e, &parent_idx)?;
        let expected = parent_idx
            .iter()
            .map(|&p| self.events[p].event.lamport)
            .max()
            .map_or(1, |m| m + 1);
        if e.lamport != expected {
            return Err(InsertError::BadLamport {
                declared: e.lamport,
                expected,
            });
        }
        if e.seq > 1 {
            let parent_time = self.events[parent_idx[0]].event.creation_time;
            if e.creation_time < parent_time {
                return Err(InsertError::TimeRegression {
                    time: e.creation_time,
                    parent_time,
                });
            }
        }
        if let Some(now) = now {
            if e.creation_time > now.saturating_add(self.config.max_future_drift) {
                return Err(InsertError::TooFarInFuture {
                    time: e.creation_time,
                    now,
                });
            }
        }

        // Validation done; from here on the store is mutated.
        let idx = self.events.len();
        let slot = self.slot_for(e.creator);

        let mut ancestry = FixedBitSet::with_capacity(idx + 1);
        let mut highest: Vec<Option<EventIdx>> = vec![None; self.creators.len()];
        let mut forkers: Vec<ValidatorId> = Vec::new();
        for &p in &parent_idx {
            let ps = &self.events[p];
            ancestry.union_with(&ps.ancestry);
            for (s, h) in ps.highest.iter().enumerate() {
                if let Some(h) = *h {
                    highest[s] = Some(match highest[s] {
                        Some(cur) if self.events[cur].event.seq >= self.events[h].event.seq => {
                            if self.events[cur].event.seq == self.events[h].event.seq {
                                cur.min(h)
                            } else {
                                cur
                            }
                        }
                        _ => h,
                    });
                }
            }
            forkers.extend_from_slice(&ps.forkers);
        }
        ancestry.grow(idx + 1);
        ancestry.insert(idx);
        match highest[slot] {
            Some(cur) if self.events[cur].event.seq > e.seq => {}
            _ => highest[slot] = Some(idx),
        }

        let new_pairs = self.find_forks(&e, &parent_idx, slot);

        forkers.sort_unstable();
        forkers.dedup();
        let creator = e.creator;
        for p in &e.parents {
            let pi = self.index[p];
            let pc = self.events[pi].event.creator;
            if let Some(set) = self.tops.get_mut(&pc) {
                set.remove(&pi);
            }
            self.children[pi].push(idx);
        }
        self.tops.entry(creator).or_default().insert(idx);
        self.by_creator[slot].push(idx);
        self.index.insert(id, idx);
        self.children.push(Vec::new());

        let mut forks = Vec::with_capacity(new_pairs.len());
        for &other in &new_pairs {
            self.fork_idx.entry(creator).or_default().push((other, idx));
            let pair = ForkPair {
                a: self.events[other].id,
                b: id,
                creator,
            };
            self.forks.push(pair);
            forks.push(pair);
        }
        if !new_pairs.is_empty() {
            self.cheaters.insert(creator);
        }

        // Fork pairs fully inside the new subgraph, for creators not yet seen forking.
        for (c, pairs) in &self.fork_idx {
            if forkers.binary_search(c).is_ok() {
                continue;
            }
            if pairs
                .iter()
                .any(|&(a, b)| (a == idx || ancestry.contains(a)) && (b == idx || ancestry.contains(b)))
            {
                let pos = forkers.binary_search(c).unwrap_err();
                forkers.insert(pos, *c);
            }
        }

        self.events.push(Stored {
            event: e,
            id,
            ancestry,
            highest,
            forkers,
        });
        Ok(Inserted { idx, id, forks })
    }

    fn check_seq(&self, e: &Event, parent_idx: &[EventIdx]) -> Result<(), InsertError> {
        let same_creator: Vec<usize> = parent_idx
            .iter()
            .enumerate()
            .filter(|(_, &p)| self.events[p].event.creator == e.creator)
            .map(|(pos, _)| pos)
            .collect();
        if e.seq == 0 {
            return Err(InsertError::BadSeq("seq must be positive".into()));
        }
        if e.seq == 1 {
            if !same_creator.is_empty() {
                return Err(InsertError::BadSeq(
                    "seq 1 event references an event of its own creator".into(),
                ));
            }
            return Ok(());
        }
        if same_creator != [0] {
            return Err(InsertError::BadSeq(format!(
                "seq {} requires exactly one self-parent in first position",
                e.seq
            )));
        }
        let sp = &self.events[parent_idx[0]].event;
        if sp.seq + 1 != e.seq {
            return Err(InsertError::BadSeq(format!(
                "seq {} after self-parent seq {}",
                e.seq, sp.seq
            )));
        }
        Ok(())
    }

    /// Stored events of the creator that are not on the new event's self-chain.
    fn find_forks(&self, e: &Event, parent_idx: &[EventIdx], slot: usize) -> Vec<EventIdx> {
        let own = &self.by_creator[slot];
        if own.is_empty() {
            return Vec::new();
        }
        // Fast path: unforked linear chain extended at its tip.
        if !self.cheaters.contains(&e.creator) && e.seq as usize == own.len() + 1 {
            let tip = *own.last().unwrap();
            if e.seq > 1 && parent_idx[0] == tip {
                return Vec::new();
            }
        }
        let mut chain = BTreeSet::new();
        if e.seq > 1 {
            let mut cur = parent_idx[0];
            loop {
                chain.insert(cur);
                let ev = &self.events[cur].event;
                if ev.seq <= 1 {
                    break;
                }
                cur = self.index[&ev.parents[0]];
            }
        }
        own.iter().copied().filter(|u| !chain.contains(u)).collect()
    }

    /// Overwrite the declared frame of a stored event. The frame is not part
    /// of the id, so indices and hashes stay valid.
    pub fn set_frame(&mut self, idx: EventIdx, frame: u64) {
        self.events[idx].event.frame = frame;
    }

    fn slot_for(&mut self, creator: ValidatorId) -> usize {
        if let Some(&s) = self.creator_slot.get(&creator) {
            return s;
        }
        let s = self.creators.len();
        self.creator_slot.insert(creator, s);
        self.creators.push(creator);
        self.by_creator.push(Vec::new());
        s
    }
}
