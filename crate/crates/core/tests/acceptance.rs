//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any of them fails.

use std::collections::{BTreeMap, HashMap};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lachesis_core::cli::{run_cli, verify_transcripts, Verdict};
use lachesis_core::consensus::{assign_frame, forkless_cause_idx, Candidate, Engine, EngineConfig, FrameIndex};
use lachesis_core::dag::{Dag, DagConfig, Event};
use lachesis_core::layering::{build_root_graph, frame_assignment_layered, lpl_layering, online_lpl, LayerMap};
use lachesis_core::ordering::{topo_sort_layered, weighted_median, Block};
use lachesis_core::simnet::{self, parse_jsonl, Fault, RunOutput, Scenario, MILLI, SECOND};
use lachesis_core::stake::{
    validate_delegation, validating_power, Account, DelegationViolation, PowerModel, ValidatorSet,
};
use lachesis_core::testkit::{random_dag, shuffle_topological, RandomDagSpec};
use lachesis_core::types::{EventId, ValidatorId};

type Outcome = Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("finality agreement", finality_agreement),
        ("fork safety", fork_safety),
        ("quorum threshold", quorum_threshold),
        ("high latency", high_latency),
        ("election determinism", election_determinism),
        ("oracle equivalence", oracle_equivalence),
        ("layered frames", layered_frames),
        ("stake rules", stake_rules),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let res = check();
        let secs = started.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL - {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(s: &Scenario) -> Result<RunOutput, String> {
    simnet::run(s).map_err(|e| e.to_string())
}

fn is_prefix(a: &str, b: &str) -> bool {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    long.starts_with(short)
}

fn finality_agreement() -> Outcome {
    let started = Instant::now();
    let mut s = Scenario::uniform(7, 1);
    s.duration = 60 * SECOND;
    let out = run(&s)?;
    ensure(!out.has_violations(), || format!("violations: {:?}", out.report.violations))?;
    for (i, a) in out.chains.iter().enumerate() {
        for (j, b) in out.chains.iter().enumerate().skip(i + 1) {
            ensure(is_prefix(a, b), || format!("chains {i} and {j} disagree"))?;
        }
    }
    let shortest = out.chains.iter().map(|c| c.lines().count()).min().unwrap_or(0);
    ensure(shortest >= 20, || format!("only {shortest} blocks on the shortest chain"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    out.write_to(dir.path()).map_err(|e| e.to_string())?;
    let mut args = vec!["lachesis-sim".to_string(), "verify".to_string()];
    for i in 0..out.chains.len() {
        args.push(dir.path().join(format!("chain-{i}.jsonl")).display().to_string());
    }
    let (mut so, mut se) = (Vec::new(), Vec::new());
    let code = run_cli(args, &mut so, &mut se);
    ensure(code == 0, || {
        format!("verify exited {code}: {}", String::from_utf8_lossy(&so) + String::from_utf8_lossy(&se))
    })?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "7 chains agree, shortest {shortest} blocks, verify exit 0, {secs:.2}s wall"
    ))
}

fn spends(block: &Block, attacker: u32) -> (bool, bool) {
    let a = format!("spend:{attacker}:all->a").into_bytes();
    let b = format!("spend:{attacker}:all->b").into_bytes();
    let mut seen = (false, false);
    for tx in &block.transactions {
        seen.0 |= tx.starts_with(&a);
        seen.1 |= tx.starts_with(&b);
    }
    seen
}

fn fork_safety() -> Outcome {
    let started = Instant::now();
    let attacker = 4u32;
    let (mut pairs, mut both_frame_roots, mut with_pairs) = (0usize, 0usize, 0usize);
    for seed in 1..=100 {
        let mut s = Scenario::uniform(5, seed);
        s.duration = 12 * SECOND;
        s.faults = vec![Fault::Fork { node: attacker, at: 4 * SECOND }];
        let out = run(&s)?;
        ensure(!out.has_violations(), || {
            format!("seed {seed}: violations {:?}", out.report.violations)
        })?;
        for n in out.report.nodes.iter().filter(|n| n.honest) {
            ensure(n.cheaters_seen.contains(&ValidatorId(attacker)), || {
                format!("seed {seed}: node {} never detected the fork", n.id.0)
            })?;
        }
        if !out.report.forks.is_empty() {
            with_pairs += 1;
        }
        for f in &out.report.forks {
            pairs += 1;
            let bad = [
                ("observed roots", f.a_observed && f.b_observed),
                ("Clotho", f.a_clotho && f.b_clotho),
                ("Atropos", f.a_atropos && f.b_atropos),
                ("finalized", f.a_final && f.b_final),
            ];
            for (what, both) in bad {
                ensure(!both, || {
                    format!("seed {seed}: node {} has both {} and {} as {what}", f.node.0, f.a.short(), f.b.short())
                })?;
            }
            if f.a_root && f.b_root {
                both_frame_roots += 1;
            }
        }
    }
    ensure(with_pairs == 100, || format!("only {with_pairs} of 100 runs recorded a fork pair"))?;

    // Attacker with 3 of 11 power sends each spend to a different half.
    let mut double = 0usize;
    for seed in 1..=10 {
        let mut s = Scenario::uniform(5, seed);
        s.stakes = vec![2, 2, 2, 2, 3];
        s.duration = 15 * SECOND;
        s.faults = vec![Fault::Fork { node: attacker, at: 5 * SECOND }];
        let out = run(&s)?;
        ensure(!out.has_violations(), || {
            format!("double spend seed {seed}: violations {:?}", out.report.violations)
        })?;
        let named: Vec<(String, String)> = out
            .chains
            .iter()
            .enumerate()
            .filter(|(i, _)| out.report.nodes[*i].honest)
            .map(|(i, c)| (format!("chain-{i}"), c.clone()))
            .collect();
        match verify_transcripts(&named)? {
            Verdict::Consistent { .. } => {}
            Verdict::Diverged { index, detail } => {
                return Err(format!("double spend seed {seed}: diverged at {index}: {detail}"))
            }
        }
        for (name, text) in &named {
            let blocks: Vec<Block> = parse_jsonl(text).map_err(|e| e.to_string())?;
            let (mut a, mut b) = (false, false);
            for blk in &blocks {
                let (x, y) = spends(blk, attacker);
                a |= x;
                b |= y;
            }
            ensure(!(a && b), || format!("double spend seed {seed}: {name} finalized both spends"))?;
            if a || b {
                double += 1;
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "100 runs, {pairs} fork pair records, none with both halves observed/Clotho/Atropos/final; \
         both halves frame roots in {both_frame_roots} records (never observed); \
         double spend: 10 runs consistent, {double} chains hold one spend, none hold both; {secs:.1}s"
    ))
}

fn window_blocks(out: &RunOutput, offline: &[u32], from: i64, to: i64) -> Vec<usize> {
    out.report
        .nodes
        .iter()
        .filter(|n| n.honest && !offline.contains(&n.id.0))
        .map(|n| n.block_times.iter().filter(|&&t| t >= from && t < to).count())
        .collect()
}

/// Highest chain length any honest node had reached before `t`.
fn network_height(out: &RunOutput, t: i64) -> usize {
    out.report
        .nodes
        .iter()
        .filter(|n| n.honest)
        .map(|n| n.block_times.iter().filter(|&&bt| bt < t).count())
        .max()
        .unwrap_or(0)
}

fn quorum_threshold() -> Outcome {
    let (from, to) = (10 * SECOND, 20 * SECOND);
    let cases: [(&[u64], &[u32], bool); 4] = [
        (&[1, 1, 1, 1, 1], &[3, 4], true),
        (&[1, 1, 1, 1, 1], &[4], false),
        (&[3, 1, 1, 1], &[0], true),
        (&[3, 1, 1, 1], &[3], false),
    ];
    let mut notes = Vec::new();
    for (stakes, offline, stalls) in cases {
        let total: u64 = stakes.iter().sum();
        let off: u64 = offline.iter().map(|&i| stakes[i as usize]).sum();
        assert_eq!(stalls, 3 * off > total);
        let mut s = Scenario::uniform(stakes.len(), 1);
        s.stakes = stakes.to_vec();
        s.duration = 30 * SECOND;
        s.faults = offline
            .iter()
            .map(|&node| Fault::Offline { node, from, to })
            .collect();
        let out = run(&s)?;
        ensure(!out.has_violations(), || format!("violations {:?}", out.report.violations))?;
        let counts = window_blocks(&out, offline, from, to);
        let label = format!("stakes {stakes:?} offline {offline:?} ({off}/{total})");
        if stalls {
            // A lagging node may still append blocks others decided before
            // the window; no block index may appear for the first time.
            let (before, until) = (network_height(&out, from), network_height(&out, to));
            ensure(before == until, || {
                format!("{label}: network height {before} -> {until} during the window")
            })?;
            let caught_up: usize = counts.iter().sum();
            let after = window_blocks(&out, offline, to, s.duration);
            notes.push(format!(
                "{label}: height stays {before} ({caught_up} catch-up appends), {after:?} after"
            ));
        } else {
            ensure(counts.iter().all(|&c| c > 0), || {
                format!("{label}: stalled {counts:?}")
            })?;
            notes.push(format!("{label}: {counts:?} in window"));
        }
    }
    Ok(notes.join("; "))
}

fn high_latency() -> Outcome {
    let mut notes = Vec::new();
    for seed in 1..=3 {
        let mut base = Scenario::uniform(7, seed);
        base.duration = 60 * SECOND;
        let mut slow = base.clone();
        // ceil(7/3) nodes behind slow links.
        slow.faults = vec![Fault::ExtraLatency {
            nodes: vec![4, 5, 6],
            min: 300 * MILLI,
            max: 700 * MILLI,
        }];
        let b = run(&base)?.metrics;
        let h = run(&slow)?.metrics;
        ensure(b.avg_ttf > 0.0 && b.avg_tps > 0.0, || format!("seed {seed}: baseline made no progress"))?;
        let ratio = h.avg_ttf / b.avg_ttf;
        let tps = h.avg_tps / b.avg_tps;
        ensure((2.0..=10.0).contains(&ratio), || {
            format!("seed {seed}: ttf {:.3}s -> {:.3}s, ratio {ratio:.2}", b.avg_ttf, h.avg_ttf)
        })?;
        ensure((0.75..=1.25).contains(&tps), || {
            format!("seed {seed}: tps {:.2} -> {:.2}", b.avg_tps, h.avg_tps)
        })?;
        notes.push(format!(
            "seed {seed}: ttf {:.2}s -> {:.2}s (x{ratio:.2}), tps {:.1} -> {:.1}",
            b.avg_ttf, h.avg_ttf, b.avg_tps, h.avg_tps
        ));
    }
    Ok(notes.join("; "))
}

#[derive(Debug, PartialEq, Eq)]
struct Election {
    frames: BTreeMap<EventId, (u64, bool)>,
    candidates: BTreeMap<(u64, ValidatorId), Option<EventId>>,
    atropoi: BTreeMap<u64, EventId>,
    transcript: String,
}

fn elect(events: &[Event], vs: &ValidatorSet, k: usize) -> Result<Election, String> {
    let config = EngineConfig {
        dag: DagConfig {
            max_parents: k,
            ..DagConfig::default()
        },
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(config, vs.clone());
    for e in events {
        engine.insert(e.clone(), None).map_err(|e| e.to_string())?;
        engine.process();
    }
    let dag = engine.dag();
    let frames = (0..dag.len())
        .map(|i| {
            let info = engine.frames().info(i).expect("every event has a frame");
            (dag.id(i), (info.frame, info.is_root))
        })
        .collect();
    let candidates = engine
        .election()
        .decided()
        .map(|(slot, c)| {
            let root = match c {
                Candidate::Yes(i) => Some(dag.id(i)),
                Candidate::No => None,
            };
            (slot, root)
        })
        .collect();
    let atropoi = engine
        .election()
        .atropoi()
        .iter()
        .map(|(f, &i)| (*f, dag.id(i)))
        .collect();
    Ok(Election {
        frames,
        candidates,
        atropoi,
        transcript: engine.chain().transcript(),
    })
}

fn election_determinism() -> Outcome {
    let mut decided = 0;
    let mut atropoi = 0;
    for seed in 0..50u64 {
        let n = 3 + (seed % 4) as u32;
        let mut spec = RandomDagSpec::honest(n, 30 + (seed as usize % 31), seed);
        spec.max_parents = 3;
        if seed % 3 == 0 {
            spec.forkers = vec![ValidatorId(n - 1)];
            spec.fork_prob = 0.15;
        }
        let events = random_dag(&spec);
        let vs = ValidatorSet::uniform(n).map_err(|e| e.to_string())?;
        let reference = elect(&events, &vs, 3)?;
        for perm in 0..3 {
            let shuffled = shuffle_topological(&events, seed * 100 + perm);
            let other = elect(&shuffled, &vs, 3)?;
            ensure(reference == other, || format!("dag {seed}, permutation {perm}: outcomes differ"))?;
        }
        decided += reference.candidates.len();
        atropoi += reference.atropoi.len();
    }
    Ok(format!(
        "50 dags x 3 permutations identical; {decided} decided slots, {atropoi} Atropoi in total"
    ))
}

/// Plain reachability and self-ancestry from parent lists.
struct Brute {
    events: Vec<Event>,
    /// reach[i][j]: event j is an ancestor of i or i itself.
    reach: Vec<Vec<bool>>,
    self_anc: Vec<Vec<bool>>,
}

impl Brute {
    fn new(events: &[Event]) -> Brute {
        let pos: HashMap<EventId, usize> = events.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
        let n = events.len();
        let mut reach = vec![vec![false; n]; n];
        let mut self_anc = vec![vec![false; n]; n];
        for i in 0..n {
            let mut stack = vec![i];
            while let Some(j) = stack.pop() {
                if !reach[i][j] {
                    reach[i][j] = true;
                    stack.extend(events[j].parents.iter().map(|p| pos[p]));
                }
            }
            let mut cur = Some(i);
            while let Some(j) = cur {
                self_anc[i][j] = true;
                cur = events[j].self_parent().map(|p| pos[p]);
            }
        }
        Brute {
            events: events.to_vec(),
            reach,
            self_anc,
        }
    }

    fn forks_in(&self, y: usize, creator: ValidatorId) -> bool {
        let mine: Vec<usize> = (0..self.events.len())
            .filter(|&j| self.reach[y][j] && self.events[j].creator == creator)
            .collect();
        mine.iter().any(|&a| {
            mine.iter()
                .any(|&b| a != b && !self.self_anc[a][b] && !self.self_anc[b][a])
        })
    }

    fn forkless_cause(&self, x: usize, y: usize, vs: &ValidatorSet) -> bool {
        if !self.reach[y][x] || self.forks_in(y, self.events[x].creator) {
            return false;
        }
        let mut power = 0;
        for (&v, &w) in vs.powers() {
            if self.forks_in(y, v) {
                continue;
            }
            let observes = (0..self.events.len()).any(|j| {
                self.events[j].creator == v && self.reach[y][j] && self.reach[j][x]
            });
            if observes {
                power += w;
            }
        }
        power >= vs.quorum()
    }

    /// Longest path in edges from `i` down to a parentless event, counted in events.
    fn longest(&self, i: usize) -> u64 {
        let pos: HashMap<EventId, usize> = self.events.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
        fn walk(b: &Brute, pos: &HashMap<EventId, usize>, i: usize) -> u64 {
            1 + b.events[i]
                .parents
                .iter()
                .map(|p| walk(b, pos, pos[p]))
                .max()
                .unwrap_or(0)
        }
        walk(self, &pos, i)
    }
}

fn dag_of(events: &[Event], k: usize) -> Result<Dag, String> {
    let mut dag = Dag::new(DagConfig {
        max_parents: k,
        ..DagConfig::default()
    });
    for e in events {
        dag.insert(e.clone()).map_err(|e| e.to_string())?;
    }
    Ok(dag)
}

fn small_dag(seed: u64, max_events: usize) -> (Vec<Event>, ValidatorSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = rng.gen_range(2..=5u32);
    let mut spec = RandomDagSpec::honest(n, rng.gen_range(1..=max_events), seed);
    spec.max_parents = rng.gen_range(2..=3);
    if rng.gen_bool(0.4) {
        spec.forkers = vec![ValidatorId(rng.gen_range(0..n))];
        spec.fork_prob = 0.3;
    }
    let powers: Vec<(ValidatorId, u64)> = (0..n).map(|v| (ValidatorId(v), rng.gen_range(1..=4))).collect();
    let vs = ValidatorSet::from_powers(powers).expect("positive powers");
    (random_dag(&spec), vs)
}

fn oracle_equivalence() -> Outcome {
    let mut pairs = 0usize;
    let mut positive = 0usize;
    let mut forked = 0usize;
    for seed in 0..400u64 {
        let (events, vs) = small_dag(seed, 12);
        let dag = dag_of(&events, 3)?;
        let brute = Brute::new(&events);
        if !dag.cheaters().is_empty() {
            forked += 1;
        }
        for x in 0..events.len() {
            for y in 0..events.len() {
                let got = forkless_cause_idx(&dag, dag.idx_of(&events[x].id()).unwrap(), dag.idx_of(&events[y].id()).unwrap(), &vs);
                let want = brute.forkless_cause(x, y, &vs);
                ensure(got == want, || {
                    format!("dag {seed}: forkless_cause({x}, {y}) = {got}, brute force says {want}")
                })?;
                pairs += 1;
                positive += got as usize;
            }
        }
    }

    // Topological orders: the finalized chain and the layered sort.
    let mut ordered = 0usize;
    for seed in 0..60u64 {
        let (events, vs) = small_dag(seed + 10_000, 40);
        let brute = Brute::new(&events);
        let pos: HashMap<EventId, usize> = events.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
        let check_topo = |order: &[EventId], what: &str| -> Result<(), String> {
            let at: HashMap<EventId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
            ensure(at.len() == order.len(), || format!("dag {seed}: {what} repeats an event"))?;
            for (i, id) in order.iter().enumerate() {
                let a = pos[id];
                for (j, other) in order.iter().enumerate().skip(i + 1) {
                    ensure(!brute.reach[a][pos[other]], || {
                        format!("dag {seed}: {what} puts {i} before its ancestor at {j}")
                    })?;
                }
                // Everything below an emitted event is emitted too.
                for (b, &r) in brute.reach[a].iter().enumerate() {
                    ensure(!r || at.contains_key(&events[b].id()), || {
                        format!("dag {seed}: {what} misses an ancestor")
                    })?;
                }
            }
            Ok(())
        };
        let mut engine = Engine::new(
            EngineConfig {
                dag: DagConfig {
                    max_parents: 3,
                    ..DagConfig::default()
                },
                ..EngineConfig::default()
            },
            vs.clone(),
        );
        for e in &events {
            engine.insert(e.clone(), None).map_err(|e| e.to_string())?;
        }
        engine.process();
        let chain_order: Vec<EventId> = engine.chain().blocks().iter().flat_map(|b| b.events.clone()).collect();
        check_topo(&chain_order, "chain")?;
        let dag = engine.dag();
        let layers = lpl_layering(dag);
        let tips: Vec<EventId> = events.iter().map(|e| e.id()).filter(|id| dag.children(dag.idx_of(id).unwrap()).is_empty()).collect();
        let sorted = topo_sort_layered(dag, &tips, &layers).map_err(|e| e.to_string())?;
        ensure(sorted.len() == events.len(), || format!("dag {seed}: layered sort lost events"))?;
        check_topo(&sorted, "layered sort")?;
        // Layers against plain path enumeration.
        for (i, e) in events.iter().enumerate() {
            let want = brute.longest(i);
            ensure(layers.get(&e.id()) == Some(want), || {
                format!("dag {seed}: event {i} layer {:?}, longest path {want}", layers.get(&e.id()))
            })?;
        }
        // Online layering over five batches.
        let mut online = LayerMap::default();
        let chunk = events.len().div_ceil(5).max(1);
        for batch in events.chunks(chunk) {
            online_lpl(&mut online, batch).map_err(|e| e.to_string())?;
        }
        ensure(online == layers, || format!("dag {seed}: online layering differs"))?;
        ordered += 1;
    }

    // Weighted median against expanding every sample into unit weights.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..2_000 {
        let len = rng.gen_range(0..8);
        let samples: Vec<(i64, u64)> = (0..len).map(|_| (rng.gen_range(-5..20), rng.gen_range(0..5))).collect();
        let mut units: Vec<i64> = samples.iter().flat_map(|&(t, w)| std::iter::repeat(t).take(w as usize)).collect();
        units.sort();
        let want = units.get(units.len() / 2).copied().filter(|_| !units.is_empty());
        let got = weighted_median(&mut samples.clone());
        ensure(got == want, || format!("median case {case}: {samples:?} gave {got:?}, expected {want:?}"))?;
    }

    Ok(format!(
        "forkless_cause matched on {pairs} pairs over 400 dags ({forked} with forks, {positive} true); \
         {ordered} dags: chain and layered orders topological, layers and 5-batch online layers exact; \
         2000 medians exact"
    ))
}

fn layered_frames() -> Outcome {
    let mut roots = 0;
    for seed in 0..20u64 {
        let n = 3 + (seed % 4) as u32;
        let mut spec = RandomDagSpec::honest(n, 60, seed + 500);
        spec.max_parents = 3;
        let events = random_dag(&spec);
        let dag = dag_of(&events, 3)?;
        ensure(dag.cheaters().is_empty(), || format!("dag {seed} has a fork"))?;
        let vs = ValidatorSet::uniform(n).map_err(|e| e.to_string())?;
        let g = build_root_graph(&dag, &vs);
        let layered = frame_assignment_layered(&dag, &g, &g.layering());
        let mut frames = FrameIndex::new();
        for i in 0..dag.len() {
            let (f, is_root) = assign_frame(&dag, i, &mut frames, &vs).map_err(|e| e.to_string())?;
            let id = dag.id(i);
            ensure(layered.get(&id) == Some(&f), || {
                format!("dag {seed}: event {i} frame {f}, layered frame {:?}", layered.get(&id))
            })?;
            ensure(g.vertices.contains(&id) == is_root, || {
                format!("dag {seed}: event {i} root {is_root} disagrees with the root graph")
            })?;
            roots += is_root as usize;
        }
    }
    Ok(format!("20 dags, frames and {roots} roots identical"))
}

fn stake_rules() -> Outcome {
    let floored = PowerModel::Floored {
        threshold: 1_000_000,
        validators_only: false,
    };
    let rich = Account::new(ValidatorId(0), 2_500_000);
    let got = validating_power(&rich, 0, floored);
    ensure(got == 2_000_000, || format!("2,500,000 tokens gave power {got}"))?;
    let small = Account::new(ValidatorId(1), 999_999);
    ensure(validating_power(&small, 0, floored) == 1, || "a user below the threshold must get 1".into())?;
    ensure(validating_power(&rich, 500_000, PowerModel::Linear) == 3_000_000, || {
        "linear power must add delegations".into()
    })?;

    let validator = Account::new(ValidatorId(2), 100);
    let delegator = Account {
        self_stake: 0,
        ..Account::new(ValidatorId(3), 10_000)
    };
    let cases = [
        (1, 1, 0, Ok(())),
        (0, 1, 0, Err(DelegationViolation::BelowMinimum)),
        (10, 0, 0, Err(DelegationViolation::LockOutOfRange)),
        (10, 365, 0, Ok(())),
        (10, 366, 0, Err(DelegationViolation::LockOutOfRange)),
        (1_500, 30, 0, Ok(())),
        (1_501, 30, 0, Err(DelegationViolation::CapExceeded)),
        (1, 30, 1_500, Err(DelegationViolation::CapExceeded)),
        (1, 30, 1_499, Ok(())),
    ];
    for (amount, lock, existing, want) in cases {
        let got = validate_delegation(&delegator, &validator, amount, lock, existing);
        ensure(got == want, || {
            format!("delegating {amount} for {lock} days on top of {existing}: {got:?}, expected {want:?}")
        })?;
    }
    let broke = Account::new(ValidatorId(4), 10);
    let got = validate_delegation(&broke, &validator, 5, 30, 0);
    ensure(got == Err(DelegationViolation::InsufficientBalance), || {
        format!("delegating self-staked tokens gave {got:?}")
    })?;
    Ok("cap 15x self stake, minimum 1 token, lock 1..=365 days, 2,500,000 -> 2,000,000".into())
}
