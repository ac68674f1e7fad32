use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enclave-chain")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

#[test]
fn honest_run_accepts() {
    let out = run(&["--scenario", scenario("hybrid.json").to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("verdict:          Accept"));
}

#[test]
fn tampered_run_rejects() {
    let out = run(&["--scenario", scenario("hybrid_tamper.json").to_str().unwrap(), "run", "--attack", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("HashMismatch"));
}

#[test]
fn malformed_scenario_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\n  \"request\": \"x\",\n  \"data_hex\": 5\n}\n").unwrap();
    let out = run(&["--scenario", path.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("data_hex"), "{err}");
}

#[test]
fn user_trace_of_reference_plan() {
    let out = run(&["trace", "--side", "user"]);
    assert_eq!(out.status.code(), Some(0));
    let text = squash(&stdout(&out));
    let expected =
        "hash_user=hash(((hash(((r||tag_f1||tag_f2)+(hash(r||tag_f3))+(r||tag_f4))||tag_f5))||tag_f6)||tag_f7)";
    assert!(text.contains(expected), "{text}");
    assert!(!text.contains("[cloud]"));
}

#[test]
fn cloud_trace_carries_result_terms() {
    let out = run(&["trace", "--side", "cloud"]);
    let text = stdout(&out);
    assert!(text.contains("⊕ hash(res_f3)"));
    assert!(text.contains("⊕ hash(res'_f3)"));
    assert!(text.contains("⊕ hash(res'_f5)"));
}

#[test]
fn single_node_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.json");
    std::fs::write(
        &path,
        r#"{"request": "one", "data_hex": "00", "enclaves": [1],
            "nodes": [{"id": "f1", "tag": "0000000000000001", "enclave": 1, "function": "identity"}],
            "edges": []}"#,
    )
    .unwrap();
    let out = run(&["--scenario", path.to_str().unwrap(), "--seed", "1", "trace", "--side", "user"]);
    assert!(stdout(&out).contains("hash_user = hash(r||tag_f1)\n"));
}

#[test]
fn seeded_output_is_byte_identical() {
    for args in [
        vec!["--seed", "42", "--format", "json", "run"],
        vec!["--seed", "42", "campaign", "--random-ddrc", "5", "--random-otm", "5"],
        vec!["--seed", "42", "trace"],
    ] {
        let a = run(&args);
        let b = run(&args);
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn random_plan_campaign_detects_everything() {
    let out = run(&["--seed", "3", "campaign", "--random-plans", "--random-ddrc", "20", "--random-otm", "20"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("detection rate: 100.00%"));
}

#[test]
fn empty_campaign_is_vacuous() {
    let out = run(&["campaign"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("attacks: 0"));
}

#[test]
fn replayed_response_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let first = run(&["--seed", "8", "run", "--dump-envelopes", d]);
    assert_eq!(first.status.code(), Some(0));
    let response = dir.path().join("response.hex");
    assert!(response.exists() && dir.path().join("request.hex").exists());
    let replay = run(&["--seed", "8", "run", "--nonce-seed", "9", "--replay-response", response.to_str().unwrap()]);
    assert_eq!(replay.status.code(), Some(2));
    assert!(stdout(&replay).contains("HashMismatch"));
}

#[test]
fn bench_usage_and_rows() {
    assert_eq!(run(&["bench", "--reps", "0"]).status.code(), Some(1));
    // The identity workload is far below a millisecond per node.
    assert_eq!(run(&["bench", "--reps", "2"]).status.code(), Some(1));
    let out = run(&["--scenario", scenario("hybrid_busyloop.json").to_str().unwrap(), "bench", "--reps", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with(" nodes"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn unknown_subcommand_is_an_error() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}
