//! Stake-weighted virtual voting on frame roots and Atropos selection.
//!
//! Subjects are slots `(frame, validator)`. A root one frame above votes yes
//! on a slot when some root of that validator in that frame forkless-causes
//! it. Higher roots take the stake-weighted majority of the votes of the
//! previous-frame roots they are forkless-caused by, and decide the slot once
//! either side reaches quorum.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::forkless::forkless_cause_idx;
use super::frames::FrameIndex;
use crate::dag::{Dag, EventIdx};
use crate::stake::ValidatorSet;
use crate::types::{EventId, ValidatorId};

/// Outcome of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Candidate {
    /// Decided TRUE; the root that was observed.
    Yes(EventIdx),
    No,
}

#[derive(Debug, Clone)]
enum Slot {
    /// Votes cast so far, by voter root; `Some(root)` is a yes carrying the
    /// observed root.
    Open(HashMap<EventIdx, Option<EventIdx>>),
    Decided(Candidate),
}

/// Result of looking for a frame's Atropos.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtroposOutcome {
    Decided(EventIdx),
    /// Some slot that precedes every TRUE slot in stake order is still open.
    Undecided,
    /// Every slot of the frame was decided FALSE.
    Empty,
}

/// One vote, for the optional election trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub subject_frame: u64,
    pub subject_validator: ValidatorId,
    pub voter: EventId,
    pub round: u64,
    pub vote: bool,
    pub yes_power: u64,
    pub no_power: u64,
    pub decision: Option<bool>,
}

#[derive(Debug, Clone, Default)]
pub struct ElectionState {
    /// Highest frame whose Atropos question is settled.
    pub last_decided_frame: u64,
    slots: BTreeMap<(u64, ValidatorId), Slot>,
    /// Position in the frame index root log up to which roots have voted.
    processed: usize,
    atropos: BTreeMap<u64, EventIdx>,
    trace: Option<Vec<VoteRecord>>,
}

impl ElectionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trace() -> Self {
        ElectionState {
            trace: Some(Vec::new()),
            ..Self::default()
        }
    }

    /// Decided slots (both outcomes), by (frame, validator).
    pub fn decided(&self) -> impl Iterator<Item = ((u64, ValidatorId), Candidate)> + '_ {
        self.slots.iter().filter_map(|(k, s)| match s {
            Slot::Decided(c) => Some((*k, *c)),
            Slot::Open(_) => None,
        })
    }

    pub fn candidate(&self, frame: u64, v: ValidatorId) -> Option<Candidate> {
        match self.slots.get(&(frame, v)) {
            Some(Slot::Decided(c)) => Some(*c),
            _ => None,
        }
    }

    /// Roots decided TRUE.
    pub fn clothos(&self) -> impl Iterator<Item = EventIdx> + '_ {
        self.decided().filter_map(|(_, c)| match c {
            Candidate::Yes(r) => Some(r),
            Candidate::No => None,
        })
    }

    pub fn atropos(&self, frame: u64) -> Option<EventIdx> {
        self.atropos.get(&frame).copied()
    }

    pub fn atropoi(&self) -> &BTreeMap<u64, EventIdx> {
        &self.atropos
    }

    /// Records a frame's Atropos (or its absence) and drops its open slots.
    pub fn settle_frame(&mut self, frame: u64, atropos: Option<EventIdx>) {
        if let Some(a) = atropos {
            self.atropos.entry(frame).or_insert(a);
        }
        self.last_decided_frame = self.last_decided_frame.max(frame);
        let open: Vec<_> = self
            .slots
            .range((frame, ValidatorId(0))..=(frame, ValidatorId(u32::MAX)))
            .filter(|(_, s)| matches!(s, Slot::Open(_)))
            .map(|(k, _)| *k)
            .collect();
        for k in open {
            self.slots.remove(&k);
        }
    }

    pub fn take_trace(&mut self) -> Vec<VoteRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn open_slots(&self) -> usize {
        self.slots.values().filter(|s| matches!(s, Slot::Open(_))).count()
    }
}

/// Lets every root assigned since the last call vote, in (frame, lamport, id)
/// order. Returns the slots decided by this call.
pub fn decide_clotho(
    state: &mut ElectionState,
    frames: &FrameIndex,
    dag: &Dag,
    vs: &ValidatorSet,
) -> Vec<((u64, ValidatorId), Candidate)> {
    let log = frames.root_log();
    if state.processed >= log.len() {
        return Vec::new();
    }
    let mut batch: Vec<EventIdx> = log[state.processed..].to_vec();
    state.processed = log.len();
    batch.sort_by(|&a, &b| {
        let (ea, eb) = (dag.event(a), dag.event(b));
        frames
            .frame_of(a)
            .cmp(&frames.frame_of(b))
            .then(ea.lamport.cmp(&eb.lamport))
            .then_with(|| dag.id(a).cmp(&dag.id(b)))
    });
    let mut newly = Vec::new();
    for y in batch {
        vote_as(state, frames, dag, vs, y, &mut newly);
    }
    newly
}

fn vote_as(
    state: &mut ElectionState,
    frames: &FrameIndex,
    dag: &Dag,
    vs: &ValidatorSet,
    y: EventIdx,
    newly: &mut Vec<((u64, ValidatorId), Candidate)>,
) {
    let info = frames.info(y).expect("roots are frame-assigned");
    let j = info.frame;
    if j > state.last_decided_frame {
        for v in vs.ids() {
            state.slots.entry((j, v)).or_insert_with(|| Slot::Open(HashMap::new()));
        }
    }
    let q = vs.quorum();
    let open: Vec<(u64, ValidatorId)> = state
        .slots
        .range(..(j, ValidatorId(0)))
        .filter(|(_, s)| matches!(s, Slot::Open(_)))
        .map(|(k, _)| *k)
        .collect();
    for (i, v) in open {
        let Some(Slot::Open(votes)) = state.slots.get_mut(&(i, v)) else {
            continue;
        };
        let round = j - i;
        let (vote, yes, no) = if round == 1 {
            let observed = frames
                .roots(i)
                .and_then(|m| m.get(&v))
                .into_iter()
                .flatten()
                .copied()
                .filter(|&r| forkless_cause_idx(dag, r, y, vs))
                .min_by_key(|&r| dag.id(r));
            (observed, 0, 0)
        } else {
            let mut yes = 0;
            let mut no = 0;
            let mut carried = None;
            for &p in &info.prev_roots {
                let w = vs.power(dag.event(p).creator);
                match votes.get(&p).copied().flatten() {
                    Some(r) => {
                        yes += w;
                        carried = carried.or(Some(r));
                    }
                    None => no += w,
                }
            }
            (if yes >= no { carried } else { None }, yes, no)
        };
        votes.insert(y, vote);
        let decision = if round >= 2 && yes >= q {
            Some(Candidate::Yes(vote.expect("yes quorum implies a yes vote")))
        } else if round >= 2 && no >= q {
            Some(Candidate::No)
        } else {
            None
        };
        if let Some(trace) = state.trace.as_mut() {
            trace.push(VoteRecord {
                subject_frame: i,
                subject_validator: v,
                voter: dag.id(y),
                round,
                vote: vote.is_some(),
                yes_power: yes,
                no_power: no,
                decision: decision.map(|d| matches!(d, Candidate::Yes(_))),
            });
        }
        if let Some(d) = decision {
            state.slots.insert((i, v), Slot::Decided(d));
            newly.push(((i, v), d));
        }
    }
}

/// Walks the frame's validators by stake descending, then id ascending, and
/// returns the first TRUE slot's root. An open slot on the way means the
/// frame is not decided yet.
pub fn decide_atropos(state: &ElectionState, frame: u64, vs: &ValidatorSet) -> AtroposOutcome {
    if let Some(a) = state.atropos(frame) {
        return AtroposOutcome::Decided(a);
    }
    for &v in vs.sorted_by_stake() {
        match state.slots.get(&(frame, v)) {
            None | Some(Slot::Open(_)) => return AtroposOutcome::Undecided,
            Some(Slot::Decided(Candidate::Yes(r))) => return AtroposOutcome::Decided(*r),
            Some(Slot::Decided(Candidate::No)) => continue,
        }
    }
    AtroposOutcome::Empty
}
