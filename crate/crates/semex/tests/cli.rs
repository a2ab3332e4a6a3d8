use std::path::Path;
use std::process::{Command, Output};

use semex::exchange::source_payload;

const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/small.toml");
const GOLDEN_PROOF: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_proof.bin");

fn semex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semex")).args(args).env_remove("SEMEX_SEED").output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = semex(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["error"], "config");
}

#[test]
fn bad_profile_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, std::fs::read_to_string(SMALL).unwrap().replace("n = 4", "n = 2")).unwrap();
    let out = semex(&["--config", path(&cfg), "exchange"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_record(&out)["message"].as_str().unwrap().contains("replicas"));
    let out = semex(&["bench-revenue", "--scales", "1,0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = semex(&[
        "prove",
        "--input",
        path(&dir.path().join("absent")),
        "--transformed-out",
        path(&dir.path().join("t")),
        "--out",
        path(&dir.path().join("p")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "domain");
}

#[test]
fn proof_format_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let source = dir.path().join("source.bin");
    std::fs::write(&source, source_payload(4096, 1).bytes()).unwrap();
    let (t, proof) = (dir.path().join("t.bin"), dir.path().join("proof.bin"));
    let out = semex(&["--config", SMALL, "--seed", "5", "prove", "--input", path(&source), "--transformed-out", path(&t), "--out", path(&proof)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["n_blocks"], 16);
    assert_eq!(std::fs::read(&proof).unwrap(), std::fs::read(GOLDEN_PROOF).unwrap());

    let out = semex(&["--config", SMALL, "verify", "--transformed", path(&t), "--proof", GOLDEN_PROOF]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), r#"{"accepted":true}"#);

    let mut bytes = std::fs::read(&t).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&t, bytes).unwrap();
    let out = semex(&["--config", SMALL, "verify", "--transformed", path(&t), "--proof", GOLDEN_PROOF]);
    assert_eq!(out.status.code(), Some(1));
    let verdict: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(verdict["accepted"], false);

    let truncated = dir.path().join("short.bin");
    std::fs::write(&truncated, &std::fs::read(GOLDEN_PROOF).unwrap()[..100]).unwrap();
    let out = semex(&["--config", SMALL, "verify", "--transformed", path(&t), "--proof", path(&truncated)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_environment() {
    let run = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_semex"));
        cmd.env_remove("SEMEX_SEED").args(["--config", SMALL]);
        if let Some(seed) = env {
            cmd.env("SEMEX_SEED", seed);
        }
        if let Some(seed) = flag {
            cmd.args(["--seed", seed]);
        }
        let out = cmd.arg("exchange").output().unwrap();
        assert!(out.status.success());
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        report["seed"].as_u64().unwrap()
    };
    assert_eq!(run(None, None), 7);
    assert_eq!(run(Some("4"), None), 4);
    assert_eq!(run(Some("4"), Some("3")), 3);
}

#[test]
fn exchange_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = semex(&["--config", SMALL, "exchange", "--out", path(dir.path())]);
    assert!(out.status.success());
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(stdout(&out).trim_end(), report);
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    let events = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert!(events.lines().last().unwrap().contains("Purchased"));
    let timings = std::fs::read_to_string(dir.path().join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 1 + parsed["txs"].as_array().unwrap().len());
    let cid = parsed["payload_cid"].as_str().unwrap();
    assert!(dir.path().join("store").join(cid).is_file());
}

#[test]
fn benches_emit_csv() {
    let out = semex(&["bench-overhead", "--messages", "5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("experiment,mechanism,msg_index,payload_bytes,overhead_ms"));
    assert_eq!(text.lines().count(), 1 + 3 * 5);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("revenue.csv");
    let out = semex(&["bench-revenue", "--scales", "1,40", "--out", path(&file)]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&file).unwrap();
    assert_eq!(text.lines().next(), Some("experiment,cost_scale,iteration,price,revenue"));
    assert_eq!(text.lines().last(), Some("revenue_inactive,40.0,0,0.0,0.0"));
}

#[test]
fn market_solve_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = semex(&["market-solve", "--out", path(&trace)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["price"].as_f64().unwrap() - 1.5).abs() < 1e-6);
    assert_eq!(v["closed_form_price"], 1.5);
    let rows = std::fs::read_to_string(trace).unwrap();
    assert_eq!(rows.lines().count() as u64, 1 + v["iterations"].as_u64().unwrap());
}
