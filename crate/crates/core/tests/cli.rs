use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lachesis-sim"))
        .args(args)
        .env_remove("LACHESIS_SIM_OUT")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    sim(&args)
}

fn chain(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("chain-{i}.jsonl"))
}

#[test]
fn run_writes_metrics_and_transcripts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(tmp.path(), &["--nodes", "4", "--duration", "5s", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("seed,nodes,duration_s,blocks_finalized"));
    assert!(lines.next().unwrap().starts_with("3,4,5,"));
    for i in 0..4 {
        assert!(chain(tmp.path(), i).exists());
    }
    for f in ["events.jsonl", "forks.jsonl", "run.json", "dag.dot"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    assert!(text(&out.stdout).contains("blocks="));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(tmp.path(), &["--nodes", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("nodes"), "{}", text(&out.stderr));

    let out = run_into(tmp.path(), &["--fault", "fork:9@1s", "--nodes", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("faults"), "{}", text(&out.stderr));

    let out = sim(&["run", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn scenario_file_and_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("s.json");
    fs::write(&scenario, r#"{"seed": 8, "stakes": [1, 1, 1], "duration": "2s"}"#).unwrap();
    let dir = tmp.path().join("out");
    let out = run_into(&dir, &["--scenario", scenario.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["scenario"]["seed"], 9);
    assert_eq!(run["scenario"]["stakes"].as_array().unwrap().len(), 3);
}

#[test]
fn fork_run_records_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_into(tmp.path(), &["--nodes", "5", "--duration", "8s", "--fault", "fork:4@2s"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let forks = fs::read_to_string(tmp.path().join("forks.jsonl")).unwrap();
    assert!(!forks.trim().is_empty());
}

#[test]
fn verify_accepts_honest_and_prefix_transcripts() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_into(tmp.path(), &["--nodes", "4", "--duration", "6s"]).status.code(), Some(0));
    let paths: Vec<String> = (0..4).map(|i| chain(tmp.path(), i).display().to_string()).collect();
    let mut args = vec!["verify"];
    args.extend(paths.iter().map(String::as_str));
    let out = sim(&args);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));
    assert!(text(&out.stdout).starts_with("consistent"));

    let full = fs::read_to_string(&paths[0]).unwrap();
    let short: String = full.lines().take(2).map(|l| format!("{l}\n")).collect();
    let short_path = tmp.path().join("short.jsonl");
    fs::write(&short_path, short).unwrap();
    let out = sim(&["verify", &paths[1], short_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stdout));

    assert_eq!(sim(&["verify", &paths[0]]).status.code(), Some(1));
}

#[test]
fn verify_reports_the_tampered_block() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run_into(tmp.path(), &["--nodes", "4", "--duration", "6s"]).status.code(), Some(0));
    let original = fs::read_to_string(chain(tmp.path(), 0)).unwrap();
    assert!(original.lines().count() >= 3);
    let tampered: String = original
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i != 2 {
                return format!("{l}\n");
            }
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            let id = v["atropos"].as_str().unwrap();
            let flipped = if id.starts_with('0') { format!("1{}", &id[1..]) } else { format!("0{}", &id[1..]) };
            v["atropos"] = flipped.into();
            format!("{v}\n")
        })
        .collect();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, tampered).unwrap();
    let out = sim(&["verify", chain(tmp.path(), 1).to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stdout).contains("diverged at block index 3"), "{}", text(&out.stdout));
}

#[test]
fn export_dot_marks_every_atropos() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = sim(&["export-dot", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(text(&out.stdout), "digraph opera {\n}\n");

    let dir = tmp.path().join("run");
    assert_eq!(run_into(&dir, &["--nodes", "4", "--duration", "6s"]).status.code(), Some(0));
    let dot_path = tmp.path().join("g.dot");
    let events = dir.join("events.jsonl");
    let out = sim(&["export-dot", events.to_str().unwrap(), "--out", dot_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let dot = fs::read_to_string(dot_path).unwrap();
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("run.json")).unwrap()).unwrap();
    let reference = run["reference_node"].as_u64().unwrap() as usize;
    let blocks = fs::read_to_string(chain(&dir, reference)).unwrap().lines().count();
    assert!(blocks > 0);
    assert_eq!(dot.matches("fillcolor=gold").count(), blocks);
}

#[test]
fn bench_writes_one_row_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = sim(&["bench", "--out", tmp.path().to_str().unwrap(), "--nodes", "4", "--duration", "2s", "--runs", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
