//! The fork-aware causality test between two events.

use crate::dag::{Dag, DagError, EventIdx};
use crate::stake::ValidatorSet;
use crate::types::EventId;

/// `y` is forkless-caused by the earlier event `x`: no fork by `x`'s creator
/// is visible from `y`, and validators holding a quorum of power have an
/// event in `y`'s subgraph that descends from `x`. Validators seen forking
/// inside `y`'s subgraph contribute nothing.
pub fn forkless_cause(dag: &Dag, x: &EventId, y: &EventId, vs: &ValidatorSet) -> Result<bool, DagError> {
    let xi = dag.resolve(x)?;
    let yi = dag.resolve(y)?;
    Ok(forkless_cause_idx(dag, xi, yi, vs))
}

pub fn forkless_cause_idx(dag: &Dag, x: EventIdx, y: EventIdx, vs: &ValidatorSet) -> bool {
    observer_power(dag, x, y, vs) >= vs.quorum()
}

/// Power of the validators that observe `x` from `y` without a fork in the
/// way; zero when `x`'s creator is seen forking. Stops counting at quorum.
pub fn observer_power(dag: &Dag, x: EventIdx, y: EventIdx, vs: &ValidatorSet) -> u64 {
    if !dag.is_ancestor_or_self(x, y) {
        return 0;
    }
    if dag.observes_fork(y, dag.event(x).creator) {
        return 0;
    }
    let q = vs.quorum();
    let mut power = 0;
    for (&v, &w) in vs.powers() {
        if dag.observes_fork(y, v) {
            continue;
        }
        if let Some(h) = dag.highest_observed(y, v) {
            if dag.is_ancestor_or_self(x, h) {
                power += w;
                if power >= q {
                    break;
                }
            }
        }
    }
    power
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::DagConfig;
    use crate::testkit::DagBuilder;

    fn dag_of(b: &DagBuilder) -> Dag {
        let mut dag = Dag::new(DagConfig::default());
        for e in b.events() {
            dag.insert(e.clone()).unwrap();
        }
        dag
    }

    /// Leaves a1..d1; b2, c2 observe a1; d2 gathers b2 and c2's view; a2
    /// closes the loop, so {a, b, c} all see a1 from below d3.
    fn seven_events() -> DagBuilder {
        let mut b = DagBuilder::new();
        b.add("a1", 0, &[]);
        b.add("b1", 1, &[]);
        b.add("c1", 2, &[]);
        b.add("d1", 3, &[]);
        b.add("b2", 1, &["b1", "a1"]);
        b.add("c2", 2, &["c1", "b2"]);
        b.add("a2", 0, &["a1", "c2"]);
        b
    }

    #[test]
    fn not_an_ancestor_is_false() {
        let b = seven_events();
        let dag = dag_of(&b);
        let vs = ValidatorSet::uniform(4).unwrap();
        assert!(!forkless_cause(&dag, &b.id("d1"), &b.id("a2"), &vs).unwrap());
    }

    #[test]
    fn three_of_four_observers_is_quorum() {
        let b = seven_events();
        let dag = dag_of(&b);
        let vs = ValidatorSet::uniform(4).unwrap();
        // Observers of a1 from a2: a (a2), b (b2), c (c2).
        assert!(forkless_cause(&dag, &b.id("a1"), &b.id("a2"), &vs).unwrap());
        // From b2 only a (with a1 itself) and b observe a1.
        assert!(!forkless_cause(&dag, &b.id("a1"), &b.id("b2"), &vs).unwrap());
        assert!(forkless_cause(&dag, &EventId::default(), &b.id("a2"), &vs).is_err());
    }

    #[test]
    fn visible_fork_of_creator_blocks_cause() {
        let mut b = seven_events();
        // a forks off a1; c3 sees both branches, a3 builds on top.
        b.add_with_txs("a1x", 0, &[], vec![b"other".to_vec()]);
        b.add("d2", 3, &["d1", "a1x"]);
        b.add("c3", 2, &["c2", "d2"]);
        b.add("b3", 1, &["b2", "c3"]);
        let dag = dag_of(&b);
        let vs = ValidatorSet::uniform(4).unwrap();
        assert!(dag.observes_fork(dag.idx_of(&b.id("b3")).unwrap(), crate::types::ValidatorId(0)));
        assert!(!forkless_cause(&dag, &b.id("a1"), &b.id("b3"), &vs).unwrap());
        // Before the fork becomes visible a1 was forkless-caused.
        assert!(forkless_cause(&dag, &b.id("a1"), &b.id("a2"), &vs).unwrap());
    }
}
