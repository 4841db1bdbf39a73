//! Longest-path layering, root graphs and layering-driven frames.
//!
//! The root graph here is built independently of the consensus indices: it
//! walks parent lists by id and counts observers by enumerating subgraphs,
//! so it can serve as a cross-check of the main frame assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Dag, Event};
use crate::stake::ValidatorSet;
use crate::types::{EventId, ValidatorId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMap {
    layers: HashMap<EventId, u64>,
}

impl LayerMap {
    pub fn get(&self, id: &EventId) -> Option<u64> {
        self.layers.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EventId, &u64)> {
        self.layers.iter()
    }

    /// Highest layer in use; 0 when empty.
    pub fn height(&self) -> u64 {
        self.layers.values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayeringError {
    #[error("event {event:?} has unlayered parent {parent:?}")]
    ParentUnlayered { event: EventId, parent: EventId },
}

/// Leaves on layer 1, every other event one above its highest parent.
pub fn lpl_layering(dag: &Dag) -> LayerMap {
    let mut phi = LayerMap::default();
    // Store order is topological, so a single pass suffices.
    for (_, id, e) in dag.iter() {
        let l = e.parents.iter().map(|p| phi.layers[p]).max().map_or(1, |m| m + 1);
        phi.layers.insert(*id, l);
    }
    phi
}

/// Extends `phi` with `diff`, given in an order where parents come first.
/// On error `phi` is left as it was.
pub fn online_lpl(phi: &mut LayerMap, diff: &[Event]) -> Result<(), LayeringError> {
    let mut added: HashMap<EventId, u64> = HashMap::with_capacity(diff.len());
    for e in diff {
        let id = e.id();
        if phi.layers.contains_key(&id) || added.contains_key(&id) {
            continue;
        }
        let mut l = 0;
        for p in &e.parents {
            let pl = phi.layers.get(p).or_else(|| added.get(p)).copied().ok_or(
                LayeringError::ParentUnlayered {
                    event: id,
                    parent: *p,
                },
            )?;
            l = l.max(pl);
        }
        added.insert(id, l + 1);
    }
    phi.layers.extend(added);
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootGraph {
    pub vertices: BTreeSet<EventId>,
    /// (from, to): `from` reaches the earlier root `to`.
    pub edges: BTreeSet<(EventId, EventId)>,
}

impl RootGraph {
    /// Longest-path layering of the root graph itself.
    pub fn layering(&self) -> BTreeMap<EventId, u64> {
        let mut out_edges: BTreeMap<EventId, Vec<EventId>> = BTreeMap::new();
        for (from, to) in &self.edges {
            out_edges.entry(*from).or_default().push(*to);
        }
        let mut memo = BTreeMap::new();
        for v in &self.vertices {
            layer_of(*v, &out_edges, &mut memo);
        }
        memo
    }
}

fn layer_of(
    v: EventId,
    out_edges: &BTreeMap<EventId, Vec<EventId>>,
    memo: &mut BTreeMap<EventId, u64>,
) -> u64 {
    if let Some(&l) = memo.get(&v) {
        return l;
    }
    let l = out_edges
        .get(&v)
        .map(|ts| ts.iter().map(|t| layer_of(*t, out_edges, memo)).max().unwrap_or(0))
        .unwrap_or(0)
        + 1;
    memo.insert(v, l);
    l
}

/// Ancestry and fork facts derived by plain enumeration.
struct Closure<'a> {
    events: Vec<&'a Event>,
    pos: HashMap<EventId, usize>,
    anc: Vec<BTreeSet<usize>>,
    self_anc: Vec<BTreeSet<usize>>,
}

impl<'a> Closure<'a> {
    fn new(dag: &'a Dag) -> Self {
        let events: Vec<&Event> = dag.iter().map(|(_, _, e)| e).collect();
        let pos: HashMap<EventId, usize> = dag.iter().map(|(i, id, _)| (*id, i)).collect();
        let mut anc: Vec<BTreeSet<usize>> = Vec::with_capacity(events.len());
        let mut self_anc: Vec<BTreeSet<usize>> = Vec::with_capacity(events.len());
        for (i, e) in events.iter().enumerate() {
            let mut a = BTreeSet::from([i]);
            for p in &e.parents {
                a.extend(anc[pos[p]].iter().copied());
            }
            anc.push(a);
            let mut s = BTreeSet::from([i]);
            if let Some(sp) = e.self_parent() {
                s.extend(self_anc[pos[sp]].iter().copied());
            }
            self_anc.push(s);
        }
        Closure {
            events,
            pos,
            anc,
            self_anc,
        }
    }

    fn forkers_within(&self, v: usize) -> BTreeSet<ValidatorId> {
        let members: Vec<usize> = self.anc[v].iter().copied().collect();
        let mut out = BTreeSet::new();
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                let (ea, eb) = (self.events[a], self.events[b]);
                if ea.creator == eb.creator
                    && !self.self_anc[a].contains(&b)
                    && !self.self_anc[b].contains(&a)
                {
                    out.insert(ea.creator);
                }
            }
        }
        out
    }

    /// Power of validators with an event in subgraph(v) descending from r.
    fn observed_power(&self, r: usize, v: usize, forkers: &BTreeSet<ValidatorId>, vs: &ValidatorSet) -> u64 {
        if !self.anc[v].contains(&r) || forkers.contains(&self.events[r].creator) {
            return 0;
        }
        let mut seen = BTreeSet::new();
        for &u in &self.anc[v] {
            let c = self.events[u].creator;
            if !forkers.contains(&c) && self.anc[u].contains(&r) {
                seen.insert(c);
            }
        }
        seen.iter().map(|c| vs.power(*c)).sum()
    }
}

/// Roots are leaves plus every vertex that quorum-reaches the roots one frame
/// below its own and sits above its self-parent's frame. A vertex's frame is
/// its highest parent frame, plus one when it quorum-reaches that frame's
/// roots. Each root keeps at most one edge per target creator, to that
/// creator's highest-layer reached root.
pub fn build_root_graph(dag: &Dag, vs: &ValidatorSet) -> RootGraph {
    let cl = Closure::new(dag);
    let phi = lpl_layering(dag);
    let mut frame: Vec<u64> = vec![0; cl.events.len()];
    let mut roots_by_frame: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    let mut graph = RootGraph::default();

    // Scan by ascending layer; equal layers are never ancestors of each other.
    let mut order: Vec<usize> = (0..cl.events.len()).collect();
    order.sort_by_key(|&i| (phi.layers[&cl.events[i].id()], i));
    for v in order {
        let e = cl.events[v];
        let id = e.id();
        let f = e.parents.iter().map(|p| frame[cl.pos[p]]).max().unwrap_or(0);
        if f == 0 {
            frame[v] = 1;
            roots_by_frame.entry(1).or_default().push(v);
            graph.vertices.insert(id);
            continue;
        }
        let forkers = cl.forkers_within(v);
        let q = vs.quorum();
        let reach = |frame: u64| -> BTreeMap<ValidatorId, usize> {
            let mut best: BTreeMap<ValidatorId, usize> = BTreeMap::new();
            for &r in roots_by_frame.get(&frame).into_iter().flatten() {
                if cl.observed_power(r, v, &forkers, vs) < q {
                    continue;
                }
                let c = cl.events[r].creator;
                let key = |i: usize| (phi.layers[&cl.events[i].id()], cl.events[i].id());
                if best.get(&c).is_none_or(|&cur| key(r) > key(cur)) {
                    best.insert(c, r);
                }
            }
            best
        };
        let power = |m: &BTreeMap<ValidatorId, usize>| m.keys().map(|c| vs.power(*c)).sum::<u64>();
        let top = reach(f);
        let (fv, targets) = if power(&top) >= q {
            (f + 1, top)
        } else {
            (f, reach(f - 1))
        };
        frame[v] = fv;
        let self_frame = e.self_parent().map_or(0, |sp| frame[cl.pos[sp]]);
        // A root needs a quorum of the previous frame's roots below it.
        if fv > self_frame && (fv == 1 || power(&targets) >= q) {
            roots_by_frame.entry(fv).or_default().push(v);
            graph.vertices.insert(id);
            for r in targets.values() {
                graph.edges.insert((id, cl.events[*r].id()));
            }
        }
    }
    graph
}

/// Frames for every event: roots take their root-graph layer, other events the
/// highest frame among their parents.
pub fn frame_assignment_layered(
    dag: &Dag,
    root_graph: &RootGraph,
    root_layers: &BTreeMap<EventId, u64>,
) -> BTreeMap<EventId, u64> {
    let mut out = BTreeMap::new();
    for (_, id, e) in dag.iter() {
        let f = if root_graph.vertices.contains(id) {
            root_layers[id]
        } else {
            e.parents.iter().map(|p| out[p]).max().unwrap_or(1)
        };
        out.insert(*id, f);
    }
    out
}
