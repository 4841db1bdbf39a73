//! One node's consensus pipeline: insert, frame, vote, finalize.

use thiserror::Error;

use super::election::{decide_atropos, decide_clotho, AtroposOutcome, ElectionState, VoteRecord};
use super::frames::{assign_frame, FrameError, FrameIndex};
use crate::dag::{Dag, DagConfig, Event, EventIdx, ForkPair, InsertError};
use crate::ordering::{make_block_at, Block, MainChain};
use crate::stake::ValidatorSet;
use crate::types::{Nanos, ValidatorId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub dag: DagConfig,
    /// Frames per epoch; 0 never closes the epoch.
    pub epoch_len: u64,
    pub trace_election: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dag: DagConfig::default(),
            epoch_len: 0,
            trace_election: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Insert(#[from] InsertError),
    #[error("creator {0} is not in the validator set")]
    UnknownCreator(ValidatorId),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStatus {
    pub idx: EventIdx,
    pub frame: u64,
    pub is_root: bool,
    pub forks: Vec<ForkPair>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    vs: ValidatorSet,
    dag: Dag,
    frames: FrameIndex,
    election: ElectionState,
    chain: MainChain,
}

impl Engine {
    pub fn new(config: EngineConfig, vs: ValidatorSet) -> Self {
        let election = if config.trace_election {
            ElectionState::with_trace()
        } else {
            ElectionState::new()
        };
        Engine {
            dag: Dag::new(config.dag.clone()),
            config,
            vs,
            frames: FrameIndex::new(),
            election,
            chain: MainChain::new(),
        }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn frames(&self) -> &FrameIndex {
        &self.frames
    }

    pub fn election(&self) -> &ElectionState {
        &self.election
    }

    pub fn chain(&self) -> &MainChain {
        &self.chain
    }

    pub fn validators(&self) -> &ValidatorSet {
        &self.vs
    }

    pub fn epoch(&self) -> u64 {
        self.dag.epoch()
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Validates, stores and frames one event. Finalization waits for [`Engine::process`].
    pub fn insert(&mut self, e: Event, now: Option<Nanos>) -> Result<EventStatus, EngineError> {
        if !self.vs.contains(e.creator) {
            return Err(EngineError::UnknownCreator(e.creator));
        }
        let ins = match now {
            Some(t) => self.dag.insert_at(e, t)?,
            None => self.dag.insert(e)?,
        };
        let (frame, is_root) = assign_frame(&self.dag, ins.idx, &mut self.frames, &self.vs)?;
        Ok(EventStatus {
            idx: ins.idx,
            frame,
            is_root,
            forks: ins.forks,
        })
    }

    /// Overwrites the stored declared frame of a locally created event.
    pub fn stamp_frame(&mut self, idx: EventIdx) {
        if let Some(f) = self.frames.frame_of(idx) {
            self.dag.set_frame(idx, f);
        }
    }

    /// Runs the election over new roots and appends every block that became
    /// final, in frame order.
    pub fn process(&mut self) -> Vec<Block> {
        decide_clotho(&mut self.election, &self.frames, &self.dag, &self.vs);
        let mut out = Vec::new();
        loop {
            let f = self.election.last_decided_frame + 1;
            if self.config.epoch_len > 0 && f > self.config.epoch_len {
                break;
            }
            match decide_atropos(&self.election, f, &self.vs) {
                AtroposOutcome::Undecided => break,
                AtroposOutcome::Empty => self.election.settle_frame(f, None),
                AtroposOutcome::Decided(a) => {
                    let block = make_block_at(&mut self.chain, &self.dag, a, f, &self.vs)
                        .expect("an atropos is blocked once");
                    self.election.settle_frame(f, Some(a));
                    out.push(block);
                }
            }
        }
        out
    }

    pub fn last_decided_frame(&self) -> u64 {
        self.election.last_decided_frame
    }

    /// All frames of the epoch are decided.
    pub fn epoch_complete(&self) -> bool {
        self.config.epoch_len > 0 && self.election.last_decided_frame >= self.config.epoch_len
    }

    /// Starts a fresh dag and election for `epoch`, keeping the chain.
    /// Returns the retired dag.
    pub fn begin_epoch(&mut self, epoch: u64, vs: ValidatorSet) -> Dag {
        let cfg = DagConfig {
            epoch,
            ..self.config.dag.clone()
        };
        self.config.dag = cfg.clone();
        self.vs = vs;
        self.frames = FrameIndex::new();
        self.election = if self.config.trace_election {
            ElectionState::with_trace()
        } else {
            ElectionState::new()
        };
        std::mem::replace(&mut self.dag, Dag::new(cfg))
    }

    pub fn take_trace(&mut self) -> Vec<VoteRecord> {
        self.election.take_trace()
    }
}
