//! Builders for hand-made and random DAGs, shared by unit and integration tests.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dag::{Event, EventBuilder, SimSigner};
use crate::types::{EventId, ValidatorId};

/// Builds valid events by name. Lamport, seq and creation time are derived
/// from the named parents; the first parent is the self-parent when the
/// creator already has an event.
#[derive(Debug, Default)]
pub struct DagBuilder {
    events: Vec<Event>,
    names: HashMap<String, usize>,
    epoch: u64,
}

impl DagBuilder {
    pub fn new() -> Self {
        DagBuilder {
            epoch: 1,
            ..Default::default()
        }
    }

    /// Appends an event. `parents` are names of earlier events; put the
    /// self-parent first.
    pub fn add(&mut self, name: &str, creator: u32, parents: &[&str]) -> EventId {
        self.add_with_txs(name, creator, parents, Vec::new())
    }

    pub fn add_with_txs(
        &mut self,
        name: &str,
        creator: u32,
        parents: &[&str],
        txs: Vec<Vec<u8>>,
    ) -> EventId {
        let creator = ValidatorId(creator);
        let parent_events: Vec<&Event> = parents
            .iter()
            .map(|p| &self.events[*self.names.get(*p).unwrap_or_else(|| panic!("unknown {p}"))])
            .collect();
        let seq = parent_events
            .first()
            .filter(|p| p.creator == creator)
            .map_or(1, |p| p.seq + 1);
        let lamport = parent_events.iter().map(|p| p.lamport).max().map_or(1, |l| l + 1);
        let time = parent_events
            .iter()
            .map(|p| p.creation_time)
            .max()
            .map_or(0, |t| t + 1);
        let e = EventBuilder::new(creator, self.epoch, seq)
            .parents(parent_events.iter().map(|p| p.id()).collect())
            .lamport(lamport)
            .creation_time(time)
            .transactions(txs)
            .build(&SimSigner);
        let id = e.id();
        self.names.insert(name.to_string(), self.events.len());
        self.events.push(e);
        id
    }

    /// Appends an event with an explicit creation time.
    pub fn add_at(&mut self, name: &str, creator: u32, parents: &[&str], time: i64) -> EventId {
        self.add(name, creator, parents);
        let idx = self.names[name];
        let mut e = self.events[idx].clone();
        e.creation_time = time;
        let e = rebuild(e);
        let id = e.id();
        self.events[idx] = e;
        id
    }

    pub fn id(&self, name: &str) -> EventId {
        self.events[self.names[name]].id()
    }

    pub fn event(&self, name: &str) -> &Event {
        &self.events[self.names[name]]
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

fn rebuild(e: Event) -> Event {
    EventBuilder::new(e.creator, e.epoch, e.seq)
        .parents(e.parents)
        .lamport(e.lamport)
        .creation_time(e.creation_time)
        .gas(e.gas_power_left, e.gas_power_used)
        .transactions(e.transactions)
        .build(&SimSigner)
}

#[derive(Debug, Clone)]
pub struct RandomDagSpec {
    pub validators: u32,
    pub events: usize,
    pub max_parents: usize,
    /// Validators allowed to fork.
    pub forkers: Vec<ValidatorId>,
    /// Chance that a forker's next event branches off an older own event.
    pub fork_prob: f64,
    pub seed: u64,
}

impl RandomDagSpec {
    pub fn honest(validators: u32, events: usize, seed: u64) -> Self {
        RandomDagSpec {
            validators,
            events,
            max_parents: 2,
            forkers: Vec::new(),
            fork_prob: 0.0,
            seed,
        }
    }
}

/// Random valid DAG in a topological order. Every validator starts with a
/// leaf; later events take the creator's last event as self-parent and the
/// latest events of random other creators as other-parents.
pub fn random_dag(spec: &RandomDagSpec) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.validators.max(1);
    let mut out: Vec<Event> = Vec::with_capacity(spec.events);
    let mut own: Vec<Vec<usize>> = vec![Vec::new(); n as usize];
    let mut latest: Vec<Option<usize>> = vec![None; n as usize];
    let mut clock: i64 = 0;

    while out.len() < spec.events {
        let creator = if out.len() < n as usize {
            out.len() as u32
        } else {
            rng.gen_range(0..n)
        };
        let c = creator as usize;
        clock += rng.gen_range(1..1_000);

        let forking = spec.forkers.contains(&ValidatorId(creator))
            && !own[c].is_empty()
            && rng.gen_bool(spec.fork_prob.clamp(0.0, 1.0));
        let self_parent = if forking {
            // Branch off a random own event, or start a second leaf.
            let pick = rng.gen_range(0..=own[c].len());
            if pick == own[c].len() {
                None
            } else {
                Some(own[c][pick])
            }
        } else {
            latest[c]
        };

        let mut parents: Vec<usize> = self_parent.into_iter().collect();
        if self_parent.is_some() && spec.max_parents > 1 {
            let want = rng.gen_range(1..spec.max_parents);
            let mut others: Vec<u32> = (0..n).filter(|&v| v != creator).collect();
            others.shuffle(&mut rng);
            parents.extend(
                others
                    .into_iter()
                    .filter_map(|v| latest[v as usize])
                    .take(want),
            );
        }

        let seq = self_parent.map_or(1, |p| out[p].seq + 1);
        let lamport = parents.iter().map(|&p| out[p].lamport).max().map_or(1, |l| l + 1);
        let min_time = self_parent.map_or(0, |p| out[p].creation_time);
        let e = EventBuilder::new(ValidatorId(creator), 1, seq)
            .parents(parents.iter().map(|&p| out[p].id()).collect())
            .lamport(lamport)
            .creation_time(clock.max(min_time))
            .transactions(vec![format!("tx-{}", out.len()).into_bytes()])
            .build(&SimSigner);
        let idx = out.len();
        out.push(e);
        own[c].push(idx);
        latest[c] = Some(idx);
    }
    out
}

/// A random topological order of `events` (which must itself be topological).
pub fn shuffle_topological(events: &[Event], seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: HashMap<EventId, usize> = events.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
    let mut remaining: Vec<usize> = events
        .iter()
        .map(|e| e.parents.iter().filter(|p| pos.contains_key(p)).count())
        .collect();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); events.len()];
    for (i, e) in events.iter().enumerate() {
        for p in &e.parents {
            if let Some(&pi) = pos.get(p) {
                children[pi].push(i);
            }
        }
    }
    let mut ready: Vec<usize> = (0..events.len()).filter(|&i| remaining[i] == 0).collect();
    let mut out = Vec::with_capacity(events.len());
    while !ready.is_empty() {
        let k = rng.gen_range(0..ready.len());
        let i = ready.swap_remove(k);
        out.push(events[i].clone());
        for &c in &children[i] {
            remaining[c] -= 1;
            if remaining[c] == 0 {
                ready.push(c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{Dag, DagConfig};

    #[test]
    fn random_dags_insert_cleanly() {
        for seed in 0..20 {
            let events = random_dag(&RandomDagSpec::honest(4, 40, seed));
            let mut dag = Dag::new(DagConfig::default());
            for e in &events {
                dag.insert(e.clone()).unwrap();
            }
            assert!(dag.cheaters().is_empty());
        }
    }

    #[test]
    fn forking_dags_insert_and_flag() {
        let mut flagged = 0;
        for seed in 0..20 {
            let spec = RandomDagSpec {
                forkers: vec![ValidatorId(0)],
                fork_prob: 0.3,
                ..RandomDagSpec::honest(4, 40, seed)
            };
            let mut dag = Dag::new(DagConfig::default());
            for e in random_dag(&spec) {
                dag.insert(e).unwrap();
            }
            assert!(dag.cheaters().iter().all(|c| *c == ValidatorId(0)));
            flagged += dag.cheaters().len();
        }
        assert!(flagged > 0);
    }

    #[test]
    fn shuffled_order_is_topological() {
        let events = random_dag(&RandomDagSpec::honest(5, 50, 7));
        for seed in 0..10 {
            let mut dag = Dag::new(DagConfig::default());
            for e in shuffle_topological(&events, seed) {
                dag.insert(e).unwrap();
            }
            assert_eq!(dag.len(), 50);
        }
    }
}
