//! End-to-end tests of the `hmem` binary: exit codes, output formats, and
//! snapshot side effects.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hmem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hmem"))
}

fn fixture_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/sample_corpus.json")
}

fn run(args: &[&str]) -> Output {
    hmem().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

#[test]
fn no_args_is_a_usage_error() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("query"));
}

#[test]
fn query_on_empty_store_succeeds_with_no_hits() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = run(&["query", "anything", "--store", store.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty());
    assert!(stderr(&out).contains("0 hits"));
}

#[test]
fn ingest_then_query_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let store = store.to_str().unwrap();

    let out = run(&[
        "ingest",
        fixture_corpus().to_str().unwrap(),
        "--store",
        store,
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("ingested 12 turns"));

    let out = run(&["query", "an action movie with car chases", "--store", store]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let first = text.lines().next().expect("at least one hit");
    // rank, similarity, weight, id, labels, excerpt
    assert!(first.trim_start().starts_with("1 "), "line: {first}");
    let fields: Vec<&str> = first.split_whitespace().collect();
    assert!(fields[1].parse::<f32>().is_ok(), "similarity: {}", fields[1]);
    assert_eq!(fields[1].split('.').nth(1).unwrap().len(), 4);
    assert!(fields[3].contains(':'), "episode id: {}", fields[3]);
    assert!(first.contains("movies"), "path labels: {first}");

    // JSON mode: one object per line, parseable.
    let out = run(&[
        "query",
        "an action movie with car chases",
        "--store",
        store,
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    for line in stdout(&out).lines() {
        let row: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(row["episode"].as_str().unwrap().contains(':'));
        assert!(row["similarity"].is_number());
    }

    // Flat mode scans all 12 episodes.
    let out = run(&[
        "query",
        "an action movie",
        "--store",
        store,
        "--flat",
        "-n",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().count(), 3);
    assert!(stderr(&out).contains("12 sim ops"));
}

#[test]
fn feedback_decay_compact_verify_flow() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let store = store.to_str().unwrap();
    run(&[
        "ingest",
        fixture_corpus().to_str().unwrap(),
        "--store",
        store,
    ]);

    let out = run(&["feedback", "4:0", "approve", "--store", store]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("multiplier 1.20"));

    // Unknown episode: data error, exit 2.
    let out = run(&["feedback", "4:999", "approve", "--store", store]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not found"));

    // Invalid kind: usage error from clap, exit 1.
    let out = run(&["feedback", "4:0", "sideways", "--store", store]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["decay", "--now", "1893456000", "--store", store]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("decayed"));

    let out = run(&["compact", "--store", store]);
    assert_eq!(out.status.code(), Some(0));
    // Everything decayed to the floor over ~5 years and was pruned.
    assert!(stdout(&out).contains("pruned"));

    let out = run(&["verify", "--store", store]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("ok"));
}

#[test]
fn bench_writes_checkpointed_report() {
    let dir = tempfile::tempdir().unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(&[
        "bench",
        fixture_corpus().to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
        "--dimension",
        "32",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("segment"));
    assert!(table.contains("session-1"));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let checkpoints = report["checkpoints"].as_array().unwrap();
    // 12 tasks: checkpoints at task 10 plus the two session boundaries.
    let tasks: Vec<u64> = checkpoints
        .iter()
        .map(|c| c["tasks"].as_u64().unwrap())
        .collect();
    assert!(tasks.contains(&10), "every-ten checkpoint: {tasks:?}");
    assert!(tasks.contains(&6), "segment boundary: {tasks:?}");
    assert!(tasks.contains(&12), "final checkpoint: {tasks:?}");
    for c in checkpoints {
        assert_eq!(c["flat_sim_ops"], c["episodes"]);
    }
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = run(&[
        "ingest",
        "/nonexistent/corpus.json",
        "--store",
        store.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn llm_ingest_without_endpoint_is_a_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = hmem()
        .args([
            "ingest",
            fixture_corpus().to_str().unwrap(),
            "--store",
            store.to_str().unwrap(),
            "--llm",
        ])
        .env_remove("HMEM_LLM_URL")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr(&out));
}

#[test]
fn store_dir_env_var_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = hmem()
        .args(["ingest", fixture_corpus().to_str().unwrap()])
        .env("HMEM_STORE_DIR", store.to_str().unwrap())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(store.join("manifest.json").exists());
}
