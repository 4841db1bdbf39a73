//! `lachesis-sim` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::export::events_to_dot;
use crate::ordering::Block;
use crate::simnet::{self, dur, parse_jsonl, EventRecord, Fault, LatencyModel, Metrics, PeerStrategy, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "LACHESIS_SIM_OUT";
const DEFAULT_OUT: &str = "sim-out";

#[derive(Debug, Parser)]
#[command(name = "lachesis-sim", version, about = "Simulate and inspect Lachesis consensus runs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write its transcripts.
    Run(RunArgs),
    /// Check that chain transcripts agree on their shared prefix.
    Verify {
        #[arg(required = true)]
        transcripts: Vec<PathBuf>,
    },
    /// Render an events.jsonl log as Graphviz DOT.
    ExportDot {
        events: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over consecutive seeds and print one metrics row each.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        runs: u64,
        /// Parallel workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Debug, Args, Default)]
struct RunArgs {
    /// Scenario JSON file; flags override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory (default: $LACHESIS_SIM_OUT, then ./sim-out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of unit-stake nodes.
    #[arg(long)]
    nodes: Option<usize>,
    /// Comma-separated stakes, one per node.
    #[arg(long, value_delimiter = ',')]
    stakes: Option<Vec<u64>>,
    #[arg(long)]
    duration: Option<String>,
    #[arg(long)]
    emission_interval: Option<String>,
    /// BASE or BASE+JITTER, e.g. 20ms+60ms.
    #[arg(long)]
    latency: Option<String>,
    #[arg(long)]
    peer_strategy: Option<String>,
    /// fork:N@T, offline:N@FROM-TO or latency:N1+N2@MIN-MAX; repeatable.
    #[arg(long)]
    fault: Vec<String>,
    /// Maximum parents per event.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tx_rate: Option<f64>,
    #[arg(long)]
    epoch_len: Option<u64>,
    #[arg(long)]
    trace_election: bool,
}

struct ConfigError(String);

fn cfg<T>(field: &str, r: Result<T, String>) -> Result<T, ConfigError> {
    r.map_err(|e| ConfigError(format!("{field}: {e}")))
}

fn parse_latency(s: &str) -> Result<LatencyModel, String> {
    let (base, jitter) = match s.split_once('+') {
        Some((b, j)) => (dur::parse(b)?, dur::parse(j)?),
        None => (dur::parse(s)?, 0),
    };
    Ok(LatencyModel {
        base,
        jitter,
        heavy_tail: None,
    })
}

fn parse_range(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once('-').ok_or_else(|| format!("{s:?} is not FROM-TO"))?;
    Ok((dur::parse(a)?, dur::parse(b)?))
}

fn parse_node(s: &str) -> Result<u32, String> {
    s.trim().parse::<u32>().map_err(|_| format!("{s:?} is not a node id"))
}

/// Parses the `--fault` mini-language.
pub fn parse_fault(s: &str) -> Result<Fault, String> {
    let (kind, rest) = s.split_once(':').ok_or_else(|| format!("{s:?} has no kind"))?;
    let (who, when) = rest.split_once('@').ok_or_else(|| format!("{s:?} has no @"))?;
    match kind {
        "fork" => Ok(Fault::Fork {
            node: parse_node(who)?,
            at: dur::parse(when)?,
        }),
        "offline" => {
            let (from, to) = parse_range(when)?;
            Ok(Fault::Offline {
                node: parse_node(who)?,
                from,
                to,
            })
        }
        "latency" => {
            let (min, max) = parse_range(when)?;
            let nodes = who.split('+').map(parse_node).collect::<Result<_, _>>()?;
            Ok(Fault::ExtraLatency { nodes, min, max })
        }
        other => Err(format!("unknown fault kind {other:?}")),
    }
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, ConfigError> {
        let mut s = match &self.scenario {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("scenario: cannot read {}: {e}", p.display())))?;
                cfg("scenario", Scenario::from_json(&text).map_err(|e| e.to_string()))?
            }
            None => Scenario::default(),
        };
        if let Some(v) = self.seed {
            s.seed = v;
        }
        match (&self.stakes, self.nodes) {
            (Some(st), Some(n)) if st.len() != n => {
                return Err(ConfigError(format!("nodes: {n} nodes but {} stakes", st.len())))
            }
            (Some(st), _) => s.stakes = st.clone(),
            (None, Some(n)) => s.stakes = vec![1; n],
            (None, None) => {}
        }
        if let Some(d) = &self.duration {
            s.duration = cfg("duration", dur::parse(d))?;
        }
        if let Some(d) = &self.emission_interval {
            s.emission_interval = cfg("emission_interval", dur::parse(d))?;
        }
        if let Some(l) = &self.latency {
            s.latency = cfg("latency", parse_latency(l))?;
        }
        if let Some(p) = &self.peer_strategy {
            s.peer_strategy = cfg("peer_strategy", p.parse::<PeerStrategy>())?;
        }
        for f in &self.fault {
            s.faults.push(cfg("fault", parse_fault(f))?);
        }
        if let Some(k) = self.k {
            s.k = k;
        }
        if let Some(r) = self.tx_rate {
            s.tx_rate = r;
        }
        if let Some(e) = self.epoch_len {
            s.epoch_len = e;
        }
        if self.trace_election {
            s.trace_election = true;
        }
        s.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(s)
    }

    fn out_dir(&self) -> PathBuf {
        out_dir(self.out.as_deref(), std::env::var_os(OUT_ENV))
    }
}

/// `--out` wins over the environment, which wins over the default.
pub fn out_dir(flag: Option<&Path>, env: Option<OsString>) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => PathBuf::from(DEFAULT_OUT),
    }
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let scenario = match args.scenario() {
        Ok(s) => s,
        Err(ConfigError(m)) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_USAGE;
        }
    };
    let dir = args.out_dir();
    let result = match simnet::run(&scenario) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(e) = result.write_to(&dir) {
        let _ = writeln!(err, "error: cannot write {}: {e}", dir.display());
        return EXIT_USAGE;
    }
    let m = &result.metrics;
    let _ = writeln!(
        out,
        "blocks={} avg_ttf={:.3}s avg_tps={:.2} events={} forks={} violations={} out={}",
        m.blocks_finalized,
        m.avg_ttf,
        m.avg_tps,
        m.events_emitted,
        result.report.forks.len(),
        result.report.violations.len(),
        dir.display()
    );
    if result.has_violations() {
        for v in &result.report.violations {
            let _ = writeln!(err, "violation: {v}");
        }
        return EXIT_VIOLATION;
    }
    EXIT_OK
}

/// Outcome of comparing chain transcripts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Consistent { shared: usize },
    /// 1-based block index of the first disagreement or corrupt block.
    Diverged { index: usize, detail: String },
}

/// Pairwise prefix check over transcripts, plus each block's own digest
/// and parent link.
pub fn verify_transcripts(named: &[(String, String)]) -> Result<Verdict, String> {
    let mut parsed: Vec<Vec<&str>> = Vec::new();
    for (name, text) in named {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        let mut parent = crate::types::Hash32::ZERO;
        for (i, l) in lines.iter().enumerate() {
            let b: Block = serde_json::from_str(l).map_err(|e| format!("{name}: line {}: {e}", i + 1))?;
            if !b.verify_digest() || b.parent != parent || b.index != i as u64 + 1 {
                return Ok(Verdict::Diverged {
                    index: i + 1,
                    detail: format!("{name}: block {} fails its digest or parent link", i + 1),
                });
            }
            parent = b.digest;
        }
        parsed.push(lines);
    }
    let mut shared = usize::MAX;
    for i in 0..parsed.len() {
        for j in i + 1..parsed.len() {
            let n = parsed[i].len().min(parsed[j].len());
            shared = shared.min(n);
            if let Some(k) = (0..n).find(|&k| parsed[i][k] != parsed[j][k]) {
                return Ok(Verdict::Diverged {
                    index: k + 1,
                    detail: format!("{} and {} differ at block {}", named[i].0, named[j].0, k + 1),
                });
            }
        }
    }
    Ok(Verdict::Consistent {
        shared: if shared == usize::MAX { 0 } else { shared },
    })
}

fn cmd_verify(paths: &[PathBuf], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if paths.len() < 2 {
        let _ = writeln!(err, "error: transcripts: need at least two");
        return EXIT_USAGE;
    }
    let mut named = Vec::new();
    for p in paths {
        match fs::read_to_string(p) {
            Ok(t) => named.push((p.display().to_string(), t)),
            Err(e) => {
                let _ = writeln!(err, "error: cannot read {}: {e}", p.display());
                return EXIT_USAGE;
            }
        }
    }
    match verify_transcripts(&named) {
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
        Ok(Verdict::Consistent { shared }) => {
            let _ = writeln!(out, "consistent: {} transcripts, {shared} shared blocks", paths.len());
            EXIT_OK
        }
        Ok(Verdict::Diverged { index, detail }) => {
            let _ = writeln!(out, "diverged at block index {index}: {detail}");
            EXIT_VIOLATION
        }
    }
}

fn cmd_export_dot(events: &Path, dest: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let text = match fs::read_to_string(events) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", events.display());
            return EXIT_USAGE;
        }
    };
    let records: Vec<EventRecord> = match parse_jsonl(&text) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", events.display());
            return EXIT_USAGE;
        }
    };
    let dot = events_to_dot(&records);
    match dest {
        Some(p) => {
            if let Err(e) = fs::write(p, dot) {
                let _ = writeln!(err, "error: cannot write {}: {e}", p.display());
                return EXIT_USAGE;
            }
        }
        None => {
            let _ = out.write_all(dot.as_bytes());
        }
    }
    EXIT_OK
}

fn cmd_bench(args: &RunArgs, runs: u64, jobs: usize, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let base = match args.scenario() {
        Ok(s) => s,
        Err(ConfigError(m)) => {
            let _ = writeln!(err, "error: {m}");
            return EXIT_USAGE;
        }
    };
    let seeds: Vec<u64> = (0..runs).map(|i| base.seed.wrapping_add(i)).collect();
    let jobs = jobs.max(1);
    let mut results: Vec<(u64, Metrics, usize)> = Vec::new();
    for chunk in seeds.chunks(jobs) {
        let batch: Vec<(u64, Metrics, usize)> = std::thread::scope(|sc| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let s = Scenario {
                        seed,
                        ..base.clone()
                    };
                    sc.spawn(move || {
                        let r = simnet::run(&s).expect("validated scenario");
                        (seed, r.metrics, r.report.violations.len())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("bench worker")).collect()
        });
        results.extend(batch);
    }
    let mut csv = format!("{}\n", Metrics::CSV_HEADER);
    for (seed, m, _) in &results {
        csv.push_str(&m.csv_row(*seed, base.nodes(), base.duration as f64 / 1e9));
        csv.push('\n');
    }
    let _ = out.write_all(csv.as_bytes());
    let dir = args.out_dir();
    if let Err(e) = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("metrics.csv"), &csv)) {
        let _ = writeln!(err, "error: cannot write {}: {e}", dir.display());
        return EXIT_USAGE;
    }
    if results.iter().any(|r| r.2 > 0) {
        EXIT_VIOLATION
    } else {
        EXIT_OK
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match &cli.cmd {
        Command::Run(a) => cmd_run(a, out, err),
        Command::Verify { transcripts } => cmd_verify(transcripts, out, err),
        Command::ExportDot { events, out: dest } => cmd_export_dot(events, dest.as_deref(), out, err),
        Command::Bench { run, runs, jobs } => cmd_bench(run, *runs, *jobs, out, err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_syntax() {
        assert_eq!(
            parse_fault("fork:2@3s"),
            Ok(Fault::Fork {
                node: 2,
                at: 3_000_000_000
            })
        );
        assert_eq!(
            parse_fault("offline:1@1s-2500ms"),
            Ok(Fault::Offline {
                node: 1,
                from: 1_000_000_000,
                to: 2_500_000_000
            })
        );
        assert_eq!(
            parse_fault("latency:4+5+6@300ms-700ms"),
            Ok(Fault::ExtraLatency {
                nodes: vec![4, 5, 6],
                min: 300_000_000,
                max: 700_000_000
            })
        );
        assert!(parse_fault("melt:1@2s").is_err());
        assert!(parse_fault("fork:x@2s").is_err());
    }

    #[test]
    fn latency_syntax() {
        let l = parse_latency("20ms+60ms").unwrap();
        assert_eq!((l.base, l.jitter), (20_000_000, 60_000_000));
        assert_eq!(parse_latency("5ms").unwrap().jitter, 0);
    }

    #[test]
    fn out_dir_precedence() {
        let flag = Path::new("flag");
        assert_eq!(out_dir(Some(flag), Some("env".into())), PathBuf::from("flag"));
        assert_eq!(out_dir(None, Some("env".into())), PathBuf::from("env"));
        assert_eq!(out_dir(None, None), PathBuf::from("sim-out"));
    }

    #[test]
    fn overrides_beat_the_file() {
        let a = RunArgs {
            nodes: Some(5),
            seed: Some(9),
            ..RunArgs::default()
        };
        let s = a.scenario().ok().unwrap();
        assert_eq!((s.nodes(), s.seed), (5, 9));
    }
}
