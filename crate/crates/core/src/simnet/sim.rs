//! The discrete-event loop.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rand::Rng;

use super::metrics::{Metrics, TtfAccumulator};
use super::node::{Message, NodeSim, Outgoing};
use super::scenario::{Fault, Scenario, ScenarioError};
use super::transcript::{RunOutput, RunReport};
use crate::stake::ValidatorSet;
use crate::types::{EventId, Hash32, Nanos, ValidatorId};

/// Recorded violations beyond this are counted but not stored.
const MAX_VIOLATIONS: usize = 100;

#[derive(Debug)]
enum Action {
    Tick(usize),
    Deliver { to: usize, from: usize, msg: Message },
    Check,
    Tx,
    Fork(usize),
}

#[derive(Debug)]
struct Scheduled {
    time: Nanos,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Sim<'a> {
    scenario: &'a Scenario,
    nodes: Vec<NodeSim>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    tx_counter: u64,
    /// First-seen digest of every block index among honest nodes.
    canonical: Vec<Hash32>,
    /// Subgraph size and lamport of every event seen on an honest node.
    seen: HashMap<EventId, (usize, u64)>,
    cursors: Vec<(u64, usize)>,
    violations: Vec<String>,
    violation_count: usize,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: Nanos, action: Action) {
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            seq: self.seq,
            action,
        });
    }

    fn violation(&mut self, msg: String) {
        self.violation_count += 1;
        if self.violations.len() < MAX_VIOLATIONS {
            tracing::warn!("{msg}");
            self.violations.push(msg);
        }
    }

    fn delay(&mut self, from: usize, to: usize) -> Nanos {
        let lat = &self.scenario.latency;
        let rng = self.nodes[from].rng();
        let mut d = lat.base;
        if lat.jitter > 0 {
            d += rng.gen_range(0..=lat.jitter);
        }
        for f in &self.scenario.faults {
            if let Fault::ExtraLatency { nodes, min, max } = f {
                if nodes.contains(&(from as u32)) || nodes.contains(&(to as u32)) {
                    d += rng.gen_range(*min..=*max);
                }
            }
        }
        if let Some(t) = &lat.heavy_tail {
            if t.max_extra > 0 && rng.gen_bool(t.prob) {
                d += rng.gen_range(0..=t.max_extra);
            }
        }
        d
    }

    fn send(&mut self, now: Nanos, from: usize, out: Vec<Outgoing>) {
        for o in out {
            let to = o.to.0 as usize;
            let d = self.delay(from, to);
            self.schedule(now + d, Action::Deliver { to, from, msg: o.msg });
        }
    }

    fn offline(&self, node: usize, now: Nanos) -> bool {
        self.scenario.is_offline(ValidatorId(node as u32), now)
    }

    fn after_step(&mut self, node: usize) {
        let blocks = self.nodes[node].take_new_blocks();
        if !self.nodes[node].honest {
            return;
        }
        for b in blocks {
            let i = (b.index - 1) as usize;
            match self.canonical.get(i) {
                None if i == self.canonical.len() => self.canonical.push(b.digest),
                None => self.violation(format!("node {node}: block {} appended out of order", b.index)),
                Some(d) if *d != b.digest => {
                    self.violation(format!("node {node}: block {} diverges from the first honest copy", b.index))
                }
                Some(_) => {}
            }
        }
    }

    /// Same event on two honest nodes must have the same subgraph, and no
    /// honest creator may appear with a fork.
    fn check(&mut self) {
        let honest: BTreeSet<ValidatorId> = self.nodes.iter().filter(|n| n.honest).map(|n| n.id).collect();
        let mut found = Vec::new();
        for (ni, node) in self.nodes.iter().enumerate() {
            if !node.honest {
                continue;
            }
            let dag = node.dag();
            let (ep, from) = self.cursors[ni];
            let start = if ep == dag.epoch() { from } else { 0 };
            for (idx, id, e) in dag.iter().skip(start) {
                let sig = (dag.ancestry(idx).count_ones(..), e.lamport);
                match self.seen.get(id) {
                    Some(prev) if *prev != sig => {
                        found.push(format!("node {ni}: event {} has a different subgraph than elsewhere", id.short()))
                    }
                    Some(_) => {}
                    None => {
                        self.seen.insert(*id, sig);
                    }
                }
            }
            self.cursors[ni] = (dag.epoch(), dag.len());
            for c in dag.cheaters() {
                if honest.contains(c) {
                    found.push(format!("node {ni}: honest node {c} observed forking"));
                }
            }
        }
        for v in found {
            self.violation(v);
        }
    }

    fn step(&mut self, now: Nanos, action: Action) {
        match action {
            Action::Tick(n) => {
                let next = now + self.scenario.emission_interval;
                self.schedule(next, Action::Tick(n));
                if self.offline(n, now) {
                    return;
                }
                let out = self.nodes[n].on_tick(now);
                self.send(now, n, out);
                self.after_step(n);
            }
            Action::Deliver { to, from, msg } => {
                if self.offline(to, now) {
                    return;
                }
                let out = self.nodes[to].on_message(now, ValidatorId(from as u32), msg);
                self.send(now, to, out);
                self.after_step(to);
            }
            Action::Check => {
                self.check();
                self.schedule(now + self.scenario.check_interval, Action::Check);
            }
            Action::Tx => {
                let n = self.nodes.len();
                let target = (self.tx_counter % n as u64) as usize;
                let mut tx = format!("tx-{:010}", self.tx_counter).into_bytes();
                if tx.len() < self.scenario.tx_size {
                    tx.resize(self.scenario.tx_size, b'.');
                }
                self.tx_counter += 1;
                self.nodes[target].inject_tx(tx);
                self.schedule(now + tx_interval(self.scenario.tx_rate), Action::Tx);
            }
            Action::Fork(n) => {
                if self.offline(n, now) {
                    return;
                }
                let out = self.nodes[n].fork(now);
                self.send(now, n, out);
                self.after_step(n);
            }
        }
    }
}

fn tx_interval(rate: f64) -> Nanos {
    ((1e9 / rate).round() as Nanos).max(1)
}

/// Runs `scenario` to completion. The result is a pure function of the scenario.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let genesis = ValidatorSet::from_powers(scenario.node_ids().zip(scenario.stakes.iter().copied()))
        .expect("validated stakes are not all zero");
    let nodes: Vec<NodeSim> = scenario.node_ids().map(|id| NodeSim::new(id, scenario, &genesis)).collect();
    let n = nodes.len();
    let mut sim = Sim {
        scenario,
        nodes,
        queue: BinaryHeap::new(),
        seq: 0,
        tx_counter: 0,
        canonical: Vec::new(),
        seen: HashMap::new(),
        cursors: vec![(0, 0); n],
        violations: Vec::new(),
        violation_count: 0,
    };

    for i in 0..n {
        let phase = sim.nodes[i].rng().gen_range(0..scenario.emission_interval);
        sim.schedule(phase, Action::Tick(i));
    }
    if scenario.tx_rate > 0.0 {
        sim.schedule(0, Action::Tx);
    }
    sim.schedule(scenario.check_interval, Action::Check);
    for f in &scenario.faults {
        if let Fault::Fork { node, at } = f {
            sim.schedule(*at, Action::Fork(*node as usize));
        }
    }

    while let Some(s) = sim.queue.pop() {
        if s.time >= scenario.duration {
            break;
        }
        sim.step(s.time, s.action);
    }
    if scenario.duration > 0 {
        sim.check();
    }
    if sim.violation_count > sim.violations.len() {
        let extra = sim.violation_count - sim.violations.len();
        sim.violations.push(format!("{extra} further violations not listed"));
    }
    Ok(finish(sim, genesis))
}

fn finish(mut sim: Sim<'_>, genesis: ValidatorSet) -> RunOutput {
    let scenario = sim.scenario;
    let end = scenario.duration;
    let faulty = scenario.faulty();
    let honest: Vec<usize> = (0..sim.nodes.len()).filter(|&i| sim.nodes[i].honest).collect();
    let clean: Vec<usize> = honest
        .iter()
        .copied()
        .filter(|&i| !faulty.contains(&ValidatorId(i as u32)))
        .collect();
    let pool = if clean.is_empty() { &honest } else { &clean };
    // Longest chain wins; the lowest id breaks ties.
    let reference = pool
        .iter()
        .copied()
        .max_by(|&a, &b| sim.nodes[a].chain().len().cmp(&sim.nodes[b].chain().len()).then(b.cmp(&a)))
        .unwrap_or(0);

    let mut ttf = TtfAccumulator::default();
    for &i in &honest {
        ttf.merge(&sim.nodes[i].ttf());
    }
    let ref_chain = sim.nodes[reference].chain();
    let transactions_executed: u64 = ref_chain.blocks().iter().map(|b| b.transactions.len() as u64).sum();
    let secs = end as f64 / 1e9;
    let metrics = Metrics {
        blocks_finalized: ref_chain.len() as u64,
        transactions_executed,
        events_emitted: sim.nodes.iter().map(|n| n.events_emitted()).sum(),
        avg_ttf: ttf.mean_secs(),
        avg_tps: if secs > 0.0 {
            transactions_executed as f64 / secs
        } else {
            0.0
        },
    };

    let chains: Vec<String> = sim.nodes.iter().map(|n| n.chain().transcript()).collect();
    let mut nodes_report = Vec::new();
    let mut forks = Vec::new();
    let mut events = Vec::new();
    let mut election = Vec::new();
    for (i, node) in sim.nodes.iter_mut().enumerate() {
        let (ev, fk, tr) = node.finish();
        if i == reference {
            events = ev;
        }
        forks.extend(fk);
        election.push(tr);
        nodes_report.push(node.report());
    }
    RunOutput {
        metrics: metrics.clone(),
        report: RunReport {
            scenario: scenario.clone(),
            validators: genesis,
            reference_node: ValidatorId(reference as u32),
            metrics,
            nodes: nodes_report,
            forks,
            violations: sim.violations,
        },
        chains,
        events,
        election,
    }
}
