//! One simulated validator: its engine, sync protocol and fault behavior.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::TtfAccumulator;
use super::peer::{select_peer, PeerBook, PeerStrategy};
use super::scenario::{Scenario, ScheduledStakeChange};
use super::transcript::{EventRecord, ForkRecord, NodeReport};
use crate::consensus::{forkless_cause_idx, Engine, EngineConfig, EngineError, VoteRecord};
use crate::dag::{Dag, DagConfig, Event, EventBuilder, EventIdx, InsertError, SimSigner};
use crate::layering::lpl_layering;
use crate::ordering::{Block, MainChain};
use crate::stake::{seal_epoch, EpochRecord, EpochState, ValidatorSet};
use crate::types::{EventId, Hash32, Nanos, ValidatorId};

/// Most missing ids asked for in one sync request.
const MAX_WANT: usize = 64;
/// Bound on buffered events from epochs not yet reached.
const MAX_FUTURE: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    SyncRequest {
        epoch: u64,
        heights: BTreeMap<ValidatorId, u64>,
        want: Vec<EventId>,
    },
    SyncResponse {
        epoch: u64,
        events: Vec<Event>,
    },
    Broadcast {
        event: Event,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: ValidatorId,
    pub msg: Message,
}

/// Seed of a node's private RNG stream.
pub fn node_seed(seed: u64, id: ValidatorId) -> [u8; 32] {
    *Hash32::digest_of(&[&seed.to_be_bytes(), &id.0.to_be_bytes()]).as_bytes()
}

#[derive(Debug, Clone)]
pub struct NodeSim {
    pub id: ValidatorId,
    pub honest: bool,
    engine: Engine,
    epoch_state: EpochState,
    epoch_len: u64,
    stake_changes: Vec<ScheduledStakeChange>,
    /// Dags of recently sealed epochs, kept to serve lagging peers.
    retired: BTreeMap<u64, Dag>,
    rng: ChaCha8Rng,
    book: PeerBook,
    strategy: PeerStrategy,
    nodes: Vec<ValidatorId>,
    k: usize,
    skew: Nanos,
    tx_size: usize,
    last_own: Option<EventId>,
    txq: VecDeque<Vec<u8>>,
    emitted_at: HashMap<EventId, Nanos>,
    /// Events waiting for a parent, keyed by that parent.
    pending: HashMap<EventId, Vec<Event>>,
    pending_ids: HashSet<EventId>,
    future: Vec<Event>,
    detected: BTreeMap<(EventId, EventId), Nanos>,
    payload_final: HashSet<EventId>,
    new_blocks: Vec<Block>,
    archive_events: Vec<EventRecord>,
    archive_forks: Vec<ForkRecord>,
    epochs: Vec<EpochRecord>,
    trace: Vec<VoteRecord>,
    ttf: TtfAccumulator,
    block_times: Vec<Nanos>,
    cheaters_seen: BTreeSet<ValidatorId>,
    events_emitted: u64,
    rejected: u64,
}

impl NodeSim {
    pub fn new(id: ValidatorId, scenario: &Scenario, genesis: &ValidatorSet) -> Self {
        let config = EngineConfig {
            dag: DagConfig {
                epoch: 1,
                max_parents: scenario.k,
                ..DagConfig::default()
            },
            epoch_len: scenario.epoch_len,
            trace_election: scenario.trace_election,
        };
        let mut epoch_state = EpochState::genesis(genesis.clone());
        epoch_state.withdrawal_delay_epochs = scenario.withdrawal_delay_epochs;
        NodeSim {
            id,
            honest: !scenario.forkers().contains(&id),
            engine: Engine::new(config, genesis.clone()),
            epoch_state,
            epoch_len: scenario.epoch_len,
            stake_changes: scenario.stake_changes.clone(),
            retired: BTreeMap::new(),
            rng: ChaCha8Rng::from_seed(node_seed(scenario.seed, id)),
            book: PeerBook::new(),
            strategy: scenario.peer_strategy,
            nodes: scenario.node_ids().collect(),
            k: scenario.k,
            skew: scenario.clock_skew.get(&id.0).copied().unwrap_or(0),
            tx_size: scenario.tx_size,
            last_own: None,
            txq: VecDeque::new(),
            emitted_at: HashMap::new(),
            pending: HashMap::new(),
            pending_ids: HashSet::new(),
            future: Vec::new(),
            detected: BTreeMap::new(),
            payload_final: HashSet::new(),
            new_blocks: Vec::new(),
            archive_events: Vec::new(),
            archive_forks: Vec::new(),
            epochs: Vec::new(),
            trace: Vec::new(),
            ttf: TtfAccumulator::default(),
            block_times: Vec::new(),
            cheaters_seen: BTreeSet::new(),
            events_emitted: 0,
            rejected: 0,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn dag(&self) -> &Dag {
        self.engine.dag()
    }

    pub fn chain(&self) -> &MainChain {
        self.engine.chain()
    }

    pub fn epoch(&self) -> u64 {
        self.engine.epoch()
    }

    pub fn book(&self) -> &PeerBook {
        &self.book
    }

    pub fn ttf(&self) -> TtfAccumulator {
        self.ttf
    }

    pub fn events_emitted(&self) -> u64 {
        self.events_emitted
    }

    pub fn is_validator(&self) -> bool {
        self.engine.validators().contains(self.id)
    }

    fn local_now(&self, now: Nanos) -> Nanos {
        now + self.skew
    }

    pub fn inject_tx(&mut self, tx: Vec<u8>) {
        self.txq.push_back(tx);
    }

    /// Blocks appended since the last call.
    pub fn take_new_blocks(&mut self) -> Vec<Block> {
        std::mem::take(&mut self.new_blocks)
    }

    /// Emission timer. The first tick of an epoch creates a leaf; later
    /// ticks start a sync with a selected peer, and the event is created
    /// when the answer arrives.
    pub fn on_tick(&mut self, now: Nanos) -> Vec<Outgoing> {
        if self.last_own.is_none() && self.is_validator() {
            return self.emit_and_broadcast(now, None);
        }
        match select_peer(
            self.id,
            &self.nodes,
            &self.book,
            self.strategy,
            self.engine.validators(),
            &mut self.rng,
        ) {
            Ok(peer) => {
                self.book.record(peer);
                vec![Outgoing {
                    to: peer,
                    msg: self.sync_request(),
                }]
            }
            Err(_) => self.emit_and_broadcast(now, None),
        }
    }

    fn sync_request(&self) -> Message {
        let dag = self.engine.dag();
        let mut heights = dag.heights();
        // The local order of a forker's events is not shared, so ask for all of them.
        for c in dag.cheaters() {
            heights.insert(*c, 0);
        }
        let mut want: Vec<EventId> = self.pending.keys().copied().collect();
        want.sort();
        want.truncate(MAX_WANT);
        Message::SyncRequest {
            epoch: self.epoch(),
            heights,
            want,
        }
    }

    pub fn on_message(&mut self, now: Nanos, from: ValidatorId, msg: Message) -> Vec<Outgoing> {
        match msg {
            Message::SyncRequest { epoch, heights, want } => {
                let events = self.serve(epoch, &heights, &want);
                vec![Outgoing {
                    to: from,
                    msg: Message::SyncResponse { epoch, events },
                }]
            }
            Message::SyncResponse { epoch, events } => {
                for e in events {
                    self.ingest(now, e);
                }
                self.after_batch(now);
                if epoch == self.epoch() && self.last_own.is_some() {
                    self.emit_and_broadcast(now, Some(from))
                } else {
                    Vec::new()
                }
            }
            Message::Broadcast { event } => {
                self.ingest(now, event);
                self.after_batch(now);
                Vec::new()
            }
        }
    }

    fn serve(&self, epoch: u64, heights: &BTreeMap<ValidatorId, u64>, want: &[EventId]) -> Vec<Event> {
        let dag = if epoch == self.epoch() {
            self.engine.dag()
        } else if let Some(d) = self.retired.get(&epoch) {
            d
        } else {
            return Vec::new();
        };
        let mut picked: BTreeSet<EventIdx> = BTreeSet::new();
        let known = |c: &ValidatorId| heights.get(c).copied().unwrap_or(0) as usize;
        for &c in dag.creators() {
            let evs = dag.events_by(c);
            let from = if dag.cheaters().contains(&c) { 0 } else { known(&c) };
            if from < evs.len() {
                picked.extend(&evs[from..]);
            }
        }
        picked.extend(want.iter().filter_map(|id| dag.idx_of(id)));
        picked.into_iter().map(|i| dag.event(i).clone()).collect()
    }

    /// Stores one received event, parking it while a parent is missing.
    fn ingest(&mut self, now: Nanos, e: Event) {
        let cur = self.epoch();
        if e.epoch < cur {
            return;
        }
        if e.epoch > cur {
            if self.future.len() < MAX_FUTURE {
                self.future.push(e);
            }
            return;
        }
        let mut stack = vec![e];
        while let Some(e) = stack.pop() {
            let id = e.id();
            if self.engine.dag().contains(&id) {
                self.pending_ids.remove(&id);
                continue;
            }
            match self.engine.insert(e.clone(), Some(self.local_now(now))) {
                Ok(st) => {
                    self.pending_ids.remove(&id);
                    for f in &st.forks {
                        self.detected.entry((f.a, f.b)).or_insert(now);
                        self.cheaters_seen.insert(f.creator);
                    }
                    if let Some(children) = self.pending.remove(&id) {
                        stack.extend(children);
                    }
                }
                Err(EngineError::Insert(InsertError::MissingParent { parent, .. })) => {
                    if self.pending_ids.insert(id) {
                        self.pending.entry(parent).or_default().push(e);
                    }
                }
                Err(err) => {
                    self.pending_ids.remove(&id);
                    self.rejected += 1;
                    tracing::debug!(node = self.id.0, %err, "event rejected");
                }
            }
        }
    }

    /// Finalizes what the new events allow, sealing epochs as they complete.
    fn after_batch(&mut self, now: Nanos) {
        loop {
            let blocks = self.engine.process();
            self.absorb(now, blocks);
            if !self.engine.epoch_complete() {
                break;
            }
            self.seal(now);
        }
    }

    fn absorb(&mut self, now: Nanos, blocks: Vec<Block>) {
        for b in blocks {
            self.block_times.push(now);
            let withheld: BTreeSet<ValidatorId> = b.cheaters.iter().copied().collect();
            for id in &b.events {
                if let Some(t) = self.emitted_at.remove(id) {
                    self.ttf.add(now - t);
                }
                let creator = self.engine.dag().get(id).map(|e| e.creator);
                if creator.is_some_and(|c| !withheld.contains(&c)) {
                    self.payload_final.insert(*id);
                }
            }
            self.new_blocks.push(b);
        }
    }

    fn seal(&mut self, now: Nanos) {
        let epoch = self.epoch();
        for c in self.stake_changes.iter().filter(|c| c.epoch == epoch) {
            self.epoch_state.queue(ValidatorId(c.validator), c.change);
        }
        let head = self.engine.chain().head_digest();
        let rec = seal_epoch(
            &mut self.epoch_state,
            self.engine.last_decided_frame(),
            &head,
            self.epoch_len,
        );
        let rec = match rec {
            Ok(r) => r,
            Err(err) => {
                // Every stake was withdrawn; keep the old set rather than halt.
                tracing::warn!(node = self.id.0, %err, "seal kept the previous validator set");
                self.epoch_state.epoch += 1;
                EpochRecord {
                    number: self.epoch_state.epoch,
                    prev_epoch_hash: crate::stake::epoch_hash(epoch, &head, self.engine.validators()),
                    validators: self.engine.validators().clone(),
                }
            }
        };
        self.archive();

        // Own transactions that missed the epoch go out again.
        let dag = self.engine.dag();
        let chain = self.engine.chain();
        let mut again: Vec<Vec<u8>> = Vec::new();
        for &i in dag.events_by(self.id) {
            if !chain.contains_event(&dag.id(i)) {
                again.extend(dag.event(i).transactions.iter().cloned());
            }
        }
        for tx in again.into_iter().rev() {
            self.txq.push_front(tx);
        }

        let old = self.engine.begin_epoch(rec.number, rec.validators.clone());
        self.retired.insert(epoch, old);
        while self.retired.len() > 2 {
            self.retired.pop_first();
        }
        self.last_own = None;
        self.pending.clear();
        self.pending_ids.clear();
        self.emitted_at.clear();
        self.detected.clear();
        self.payload_final.clear();
        self.epochs.push(rec);

        let future = std::mem::take(&mut self.future);
        for e in future {
            self.ingest(now, e);
        }
    }

    /// Picks parents for a new own event: the self-parent, then the
    /// latest events of `peer` and of random other creators that the
    /// self-parent does not already reach.
    fn choose_parents(&mut self, peer: Option<ValidatorId>) -> Vec<EventIdx> {
        let dag = self.engine.dag();
        let Some(sp) = self.last_own.and_then(|id| dag.idx_of(&id)) else {
            return Vec::new();
        };
        let mut parents = vec![sp];
        let mut others: Vec<ValidatorId> = dag
            .creators()
            .iter()
            .copied()
            .filter(|&c| c != self.id && Some(c) != peer)
            .collect();
        others.sort();
        others.shuffle(&mut self.rng);
        if let Some(p) = peer.filter(|&p| p != self.id) {
            others.insert(0, p);
        }
        for c in others {
            if parents.len() >= self.k {
                break;
            }
            let Some(&top) = dag.events_by(c).last() else {
                continue;
            };
            if !dag.is_ancestor_or_self(top, sp) && !parents.contains(&top) {
                parents.push(top);
            }
        }
        parents
    }

    fn build_event(&self, now: Nanos, parents: &[EventIdx], txs: Vec<Vec<u8>>) -> Event {
        let dag = self.engine.dag();
        let sp = parents.first().map(|&p| dag.event(p));
        let seq = sp.map_or(1, |p| p.seq + 1);
        let lamport = parents.iter().map(|&p| dag.event(p).lamport).max().map_or(1, |l| l + 1);
        let time = sp.map_or(self.local_now(now), |p| p.creation_time.max(self.local_now(now)));
        EventBuilder::new(self.id, self.epoch(), seq)
            .parents(parents.iter().map(|&p| dag.id(p)).collect())
            .lamport(lamport)
            .creation_time(time)
            .transactions(txs)
            .build(&SimSigner)
    }

    /// Inserts an own event and stamps its frame. Returns the stored copy.
    fn store_own(&mut self, now: Nanos, e: Event) -> Option<Event> {
        let id = e.id();
        match self.engine.insert(e, Some(self.local_now(now))) {
            Ok(st) => {
                self.engine.stamp_frame(st.idx);
                self.emitted_at.insert(id, now);
                self.events_emitted += 1;
                for f in &st.forks {
                    self.detected.entry((f.a, f.b)).or_insert(now);
                    self.cheaters_seen.insert(f.creator);
                }
                Some(self.engine.dag().event(st.idx).clone())
            }
            Err(err) => {
                tracing::warn!(node = self.id.0, %err, "own event rejected");
                None
            }
        }
    }

    fn emit_and_broadcast(&mut self, now: Nanos, peer: Option<ValidatorId>) -> Vec<Outgoing> {
        if !self.is_validator() {
            return Vec::new();
        }
        let parents = self.choose_parents(peer);
        let txs: Vec<Vec<u8>> = self.txq.drain(..).collect();
        let e = self.build_event(now, &parents, txs);
        let Some(stored) = self.store_own(now, e.clone()) else {
            for tx in e.transactions.into_iter().rev() {
                self.txq.push_front(tx);
            }
            return Vec::new();
        };
        self.last_own = Some(stored.id());
        self.after_batch(now);
        self.broadcast(stored)
    }

    fn broadcast(&self, e: Event) -> Vec<Outgoing> {
        self.nodes
            .iter()
            .filter(|&&p| p != self.id)
            .map(|&p| Outgoing {
                to: p,
                msg: Message::Broadcast { event: e.clone() },
            })
            .collect()
    }

    /// Equivocates: two events on the same parents with conflicting
    /// spends, each sent to one half of the peers. The node then keeps
    /// building on the first.
    pub fn fork(&mut self, now: Nanos) -> Vec<Outgoing> {
        if !self.is_validator() {
            return Vec::new();
        }
        let parents = self.choose_parents(None);
        let spend = |to: &str| {
            let mut tx = format!("spend:{}:all->{to}", self.id).into_bytes();
            if tx.len() < self.tx_size {
                tx.resize(self.tx_size, b'.');
            }
            tx
        };
        let mut tx_a: Vec<Vec<u8>> = self.txq.drain(..).collect();
        tx_a.push(spend("a"));
        let x1 = self.build_event(now, &parents, tx_a);
        let x2 = self.build_event(now, &parents, vec![spend("b")]);
        let (Some(x1), Some(x2)) = (self.store_own(now, x1), self.store_own(now, x2)) else {
            return Vec::new();
        };
        self.last_own = Some(x1.id());
        self.after_batch(now);
        let peers: Vec<ValidatorId> = self.nodes.iter().copied().filter(|&p| p != self.id).collect();
        let half = peers.len().div_ceil(2);
        peers
            .iter()
            .enumerate()
            .map(|(i, &p)| Outgoing {
                to: p,
                msg: Message::Broadcast {
                    event: if i < half { x1.clone() } else { x2.clone() },
                },
            })
            .collect()
    }

    fn archive(&mut self) {
        self.archive_events.extend(self.event_records());
        let forks = self.fork_records();
        self.archive_forks.extend(forks);
        if let Some(t) = self.engine_trace() {
            self.trace.extend(t);
        }
    }

    fn engine_trace(&mut self) -> Option<Vec<VoteRecord>> {
        if self.engine.config().trace_election {
            Some(self.engine.take_trace())
        } else {
            None
        }
    }

    fn event_records(&self) -> Vec<EventRecord> {
        let dag = self.engine.dag();
        let frames = self.engine.frames();
        let election = self.engine.election();
        let layers = lpl_layering(dag);
        let clothos: HashSet<EventIdx> = election.clothos().collect();
        let atropoi: HashSet<EventIdx> = election.atropoi().values().copied().collect();
        let forked: HashSet<EventId> = dag.forks().iter().flat_map(|f| [f.a, f.b]).collect();
        dag.iter()
            .map(|(idx, id, e)| EventRecord {
                epoch: e.epoch,
                id: *id,
                creator: e.creator,
                seq: e.seq,
                lamport: e.lamport,
                creation_time: e.creation_time,
                frame: frames.frame_of(idx).unwrap_or(0),
                layer: layers.get(id).unwrap_or(0),
                parents: e.parents.clone(),
                tx_count: e.transactions.len(),
                root: frames.is_root(idx),
                clotho: clothos.contains(&idx),
                atropos: atropoi.contains(&idx),
                fork: forked.contains(id),
            })
            .collect()
    }

    fn fork_records(&self) -> Vec<ForkRecord> {
        let dag = self.engine.dag();
        let frames = self.engine.frames();
        let election = self.engine.election();
        let vs = self.engine.validators();
        let clothos: HashSet<EventIdx> = election.clothos().collect();
        let atropoi: HashSet<EventIdx> = election.atropoi().values().copied().collect();
        let observed = |x: EventIdx| {
            if !frames.is_root(x) {
                return false;
            }
            let f = frames.frame_of(x).unwrap_or(0);
            frames
                .roots_flat(f + 1)
                .any(|(_, r)| forkless_cause_idx(dag, x, r, vs))
        };
        dag.forks()
            .iter()
            .map(|f| {
                let a = dag.idx_of(&f.a).expect("fork halves are stored");
                let b = dag.idx_of(&f.b).expect("fork halves are stored");
                ForkRecord {
                    node: self.id,
                    epoch: dag.epoch(),
                    creator: f.creator,
                    a: f.a,
                    b: f.b,
                    detected_at: self.detected.get(&(f.a, f.b)).copied().unwrap_or(-1),
                    a_root: frames.is_root(a),
                    b_root: frames.is_root(b),
                    a_observed: observed(a),
                    b_observed: observed(b),
                    a_clotho: clothos.contains(&a),
                    b_clotho: clothos.contains(&b),
                    a_atropos: atropoi.contains(&a),
                    b_atropos: atropoi.contains(&b),
                    a_final: self.payload_final.contains(&f.a),
                    b_final: self.payload_final.contains(&f.b),
                }
            })
            .collect()
    }

    /// Archives the open epoch and returns every event record, fork record
    /// and vote seen by this node.
    pub fn finish(&mut self) -> (Vec<EventRecord>, Vec<ForkRecord>, Vec<VoteRecord>) {
        self.archive();
        (
            std::mem::take(&mut self.archive_events),
            std::mem::take(&mut self.archive_forks),
            std::mem::take(&mut self.trace),
        )
    }

    /// Digest over the sorted ids of the open epoch's dag.
    pub fn dag_digest(&self) -> Hash32 {
        let mut ids: Vec<EventId> = self.dag().iter().map(|(_, id, _)| *id).collect();
        ids.sort();
        let bytes: Vec<u8> = ids.iter().flat_map(|id| *id.as_bytes()).collect();
        Hash32::digest_of(&[&bytes])
    }

    pub fn report(&self) -> NodeReport {
        let transactions_finalized = self
            .chain()
            .blocks()
            .iter()
            .map(|b| b.transactions.len() as u64)
            .sum();
        NodeReport {
            id: self.id,
            honest: self.honest,
            chain_len: self.chain().len(),
            events_emitted: self.events_emitted,
            transactions_finalized,
            avg_ttf: self.ttf.mean_secs(),
            block_times: self.block_times.clone(),
            epochs: self.epochs.clone(),
            rejected_events: self.rejected,
            pending_events: self.pending_ids.len(),
            cheaters_seen: self.cheaters_seen.iter().copied().collect(),
            time_regressions: self.chain().time_regressions(),
            dag_epoch: self.epoch(),
            dag_len: self.dag().len(),
            dag_digest: self.dag_digest(),
        }
    }
}
