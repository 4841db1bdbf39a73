//! Root and frame assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::forkless::forkless_cause_idx;
use crate::dag::{Dag, EventIdx};
use crate::stake::ValidatorSet;
use crate::types::{EventId, ValidatorId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub frame: u64,
    pub is_root: bool,
    /// For roots: roots of the previous frame that forkless-cause this one,
    /// at most one per validator. These are the voters it aggregates.
    #[serde(skip)]
    pub prev_roots: Vec<EventIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("parent {0:?} has no frame yet")]
    ParentUnassigned(EventId),
}

/// Frame assignments of one dag plus the roots of every frame.
#[derive(Debug, Clone, Default)]
pub struct FrameIndex {
    info: Vec<Option<FrameInfo>>,
    /// Entry `f - 1` lists frame `f` roots per validator; more than one only via forks.
    roots: Vec<BTreeMap<ValidatorId, Vec<EventIdx>>>,
    /// Roots in the order they were assigned.
    root_log: Vec<EventIdx>,
    /// Events whose creator-declared frame differs from the computed one.
    mismatches: u64,
}

impl FrameIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn info(&self, idx: EventIdx) -> Option<&FrameInfo> {
        self.info.get(idx).and_then(Option::as_ref)
    }

    pub fn frame_of(&self, idx: EventIdx) -> Option<u64> {
        self.info(idx).map(|i| i.frame)
    }

    pub fn is_root(&self, idx: EventIdx) -> bool {
        self.info(idx).is_some_and(|i| i.is_root)
    }

    /// Highest frame with at least one root; 0 when empty.
    pub fn max_frame(&self) -> u64 {
        self.roots.len() as u64
    }

    pub fn roots(&self, frame: u64) -> Option<&BTreeMap<ValidatorId, Vec<EventIdx>>> {
        if frame == 0 {
            return None;
        }
        self.roots.get(frame as usize - 1)
    }

    /// Roots of `frame` as a flat list, validator order then arrival order.
    pub fn roots_flat(&self, frame: u64) -> impl Iterator<Item = (ValidatorId, EventIdx)> + '_ {
        self.roots(frame)
            .into_iter()
            .flat_map(|m| m.iter().flat_map(|(v, rs)| rs.iter().map(move |r| (*v, *r))))
    }

    pub fn root_log(&self) -> &[EventIdx] {
        &self.root_log
    }

    pub fn declared_frame_mismatches(&self) -> u64 {
        self.mismatches
    }

    fn record(&mut self, dag: &Dag, idx: EventIdx, info: FrameInfo) {
        if self.info.len() <= idx {
            self.info.resize(idx + 1, None);
        }
        if info.is_root {
            let f = info.frame as usize;
            while self.roots.len() < f {
                self.roots.push(BTreeMap::new());
            }
            self.roots[f - 1]
                .entry(dag.event(idx).creator)
                .or_default()
                .push(idx);
            self.root_log.push(idx);
        }
        let declared = dag.event(idx).frame;
        if declared != 0 && declared != info.frame {
            self.mismatches += 1;
        }
        self.info[idx] = Some(info);
    }
}

/// Assigns `e` its frame. A leaf roots frame 1. Otherwise with `f` the highest
/// parent frame, `e` is in frame `f + 1` when frame-`f` roots of quorum power
/// forkless-cause it, and in frame `f` if not. It is a root whenever its frame
/// is above its self-parent's, which covers creators catching up through an
/// other-parent.
pub fn assign_frame(
    dag: &Dag,
    e: EventIdx,
    frames: &mut FrameIndex,
    vs: &ValidatorSet,
) -> Result<(u64, bool), FrameError> {
    if let Some(i) = frames.info(e) {
        return Ok((i.frame, i.is_root));
    }
    let mut f = 0;
    for p in dag.parents_idx(e) {
        let pf = frames.frame_of(p).ok_or(FrameError::ParentUnassigned(dag.id(p)))?;
        f = f.max(pf);
    }
    let info = if f == 0 {
        FrameInfo {
            frame: 1,
            is_root: true,
            prev_roots: Vec::new(),
        }
    } else {
        let (power, caused) = causing_roots(dag, e, frames, vs, f);
        let frame = if power >= vs.quorum() { f + 1 } else { f };
        let self_frame = match dag.event(e).self_parent() {
            Some(sp) => frames.frame_of(dag.idx_of(sp).expect("stored parent")).unwrap_or(0),
            None => 0,
        };
        let is_root = frame > self_frame;
        let prev_roots = match (is_root, frame == f + 1) {
            (false, _) => Vec::new(),
            (true, true) => caused,
            (true, false) => causing_roots(dag, e, frames, vs, f - 1).1,
        };
        FrameInfo {
            frame,
            is_root,
            prev_roots,
        }
    };
    let out = (info.frame, info.is_root);
    frames.record(dag, e, info);
    Ok(out)
}

/// Frame-`f` roots that forkless-cause `e`, one per validator, and their power.
fn causing_roots(
    dag: &Dag,
    e: EventIdx,
    frames: &FrameIndex,
    vs: &ValidatorSet,
    f: u64,
) -> (u64, Vec<EventIdx>) {
    let mut roots = Vec::new();
    let mut power = 0;
    let mut last: Option<ValidatorId> = None;
    for (v, r) in frames.roots_flat(f) {
        if last == Some(v) {
            continue;
        }
        if forkless_cause_idx(dag, r, e, vs) {
            roots.push(r);
            power += vs.power(v);
            last = Some(v);
        }
    }
    (power, roots)
}
