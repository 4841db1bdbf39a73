//! Graphviz rendering of an event log.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use crate::simnet::EventRecord;
use crate::types::EventId;

fn node_name(id: &EventId) -> String {
    format!("e{}", &id.0.to_hex()[..16])
}

/// DOT text with one rank per (epoch, layer). Roots are red, Clotho and
/// Atropos events are labelled, fork halves get a double border.
pub fn events_to_dot(records: &[EventRecord]) -> String {
    let mut out = String::from("digraph opera {\n");
    if records.is_empty() {
        out.push_str("}\n");
        return out;
    }
    out.push_str("  rankdir=BT;\n  node [shape=circle, fontsize=10];\n");
    let known: HashSet<EventId> = records.iter().map(|r| r.id).collect();
    let mut ranks: BTreeMap<(u64, u64), Vec<String>> = BTreeMap::new();
    for r in records {
        let name = node_name(&r.id);
        let mut label = format!("{}:{}\\nL{} F{}", r.creator, r.seq, r.lamport, r.frame);
        if r.atropos {
            label.push_str("\\nAtropos");
        } else if r.clotho {
            label.push_str("\\nClotho");
        }
        let mut attrs = vec![format!("label=\"{label}\"")];
        if r.root {
            attrs.push("color=red".into());
        }
        if r.fork {
            attrs.push("peripheries=2".into());
        }
        if r.atropos {
            attrs.push("style=filled, fillcolor=gold".into());
        } else if r.clotho {
            attrs.push("style=filled, fillcolor=lightblue".into());
        }
        let _ = writeln!(out, "  {name} [{}];", attrs.join(", "));
        ranks.entry((r.epoch, r.layer)).or_default().push(name);
    }
    for names in ranks.values() {
        let _ = writeln!(out, "  {{ rank=same; {}; }}", names.join("; "));
    }
    for r in records {
        for p in r.parents.iter().filter(|p| known.contains(p)) {
            let _ = writeln!(out, "  {} -> {};", node_name(&r.id), node_name(p));
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Hash32, ValidatorId};

    fn rec(n: u8, parents: &[u8], root: bool, atropos: bool) -> EventRecord {
        let id = |b: u8| EventId(Hash32([b; 32]));
        EventRecord {
            epoch: 1,
            id: id(n),
            creator: ValidatorId(n as u32 % 2),
            seq: 1,
            lamport: parents.len() as u64 + 1,
            creation_time: 0,
            frame: 1,
            layer: parents.len() as u64,
            parents: parents.iter().map(|&p| id(p)).collect(),
            tx_count: 0,
            root,
            clotho: atropos,
            atropos,
            fork: false,
        }
    }

    #[test]
    fn empty_log_is_empty_digraph() {
        assert_eq!(events_to_dot(&[]), "digraph opera {\n}\n");
    }

    #[test]
    fn counts_nodes_and_edges() {
        let log = vec![
            rec(1, &[], true, true),
            rec(2, &[], true, false),
            rec(3, &[1, 2], false, false),
            rec(4, &[2], false, false),
            rec(5, &[3, 4], false, false),
        ];
        let dot = events_to_dot(&log);
        assert_eq!(dot.matches(" [label=").count(), 5);
        assert_eq!(dot.matches(" -> ").count(), 5);
        assert_eq!(dot.matches("Atropos").count(), 1);
        assert_eq!(dot.matches("color=red").count(), 2);
        assert_eq!(dot, events_to_dot(&log));
    }
}
