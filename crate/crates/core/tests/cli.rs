use std::path::Path;
use std::process::{Command, Output};

use memcoref::corpus::{parse_jsonl, read_results_csv, RESULTS_HEADER};
use serde_json::Value;

fn memcoref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memcoref"))
        .args(args)
        .env_remove("MEMCOREF_SEED")
        .output()
        .expect("spawn memcoref")
}

fn ok(args: &[&str]) -> Output {
    let out = memcoref(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn gen(dir: &Path, extra: &[&str]) -> String {
    let path = dir.join("corpus.jsonl");
    let p = path.to_str().unwrap().to_string();
    let mut args = vec!["gen", "--out", &p, "--docs", "3", "--entities", "10"];
    args.extend_from_slice(extra);
    ok(&args);
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn run_with_ample_cache_is_perfect_and_rescoring_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), &["--seed", "4"]);
    let out = dir.path().join("out");
    ok(&["run", &corpus, "--tau1", "500", "--tau2", "500", "--out", out.to_str().unwrap()]);

    let report = json(&out.join("report.json"));
    assert_eq!(report["aggregate"]["avg_f1"], 100.0);
    assert_eq!(report["evictions"], 0);
    assert_eq!(report["documents"].as_array().unwrap().len(), 3);

    let preds = out.join("predictions.jsonl");
    assert_eq!(parse_jsonl(&preds).unwrap().len(), 3);
    let scored = ok(&["score", "--gold", &corpus, "--pred", preds.to_str().unwrap()]);
    let scored: Value = serde_json::from_slice(&scored.stdout).unwrap();
    assert_eq!(scored["aggregate"], report["aggregate"]);
}

#[test]
fn score_output_matches_run_report_under_eviction() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), &["--seed", "9"]);
    let out = dir.path().join("out");
    ok(&["run", &corpus, "--tau1", "2", "--tau2", "3", "--micro", "--out", out.to_str().unwrap()]);
    let report = json(&out.join("report.json"));
    assert!(report["evictions"].as_u64().unwrap() > 0);
    let preds = out.join("predictions.jsonl");
    let scored = ok(&["score", "--gold", &corpus, "--pred", preds.to_str().unwrap(), "--micro"]);
    let scored: Value = serde_json::from_slice(&scored.stdout).unwrap();
    assert_eq!(scored["aggregation"], "micro");
    assert_eq!(scored["aggregate"], report["aggregate"]);
}

#[test]
fn seed_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(&["gen", "--out", a.to_str().unwrap(), "--docs", "2", "--seed", "17"]);
    let out = Command::new(env!("CARGO_BIN_EXE_memcoref"))
        .args(["gen", "--out", b.to_str().unwrap(), "--docs", "2"])
        .env("MEMCOREF_SEED", "17")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn sweep_writes_detail_and_summary_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), &[]);
    let csv = dir.path().join("results.csv");
    ok(&["sweep", &corpus, "--grid", "2/2,4/3", "--policies", "saes,lru", "--seeds", "2", "--out", csv.to_str().unwrap()]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER.join(","));
    let rows = read_results_csv(&csv).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 4);
    assert_eq!(rows.iter().filter(|r| r.seed == "mean").count(), 4);
    assert_eq!(rows.iter().filter(|r| r.seed == "std").count(), 4);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), &[]);
    let csv = dir.path().join("r.csv");
    let o = dir.path().join("o");
    let cases: [&[&str]; 5] = [
        &["sweep", &corpus, "--grid", "50/1", "--out", csv.to_str().unwrap()],
        &["run", &corpus, "--infer-policy", "saes-train", "--out", o.to_str().unwrap()],
        &["run", &corpus, "--tau1", "0", "--out", o.to_str().unwrap()],
        &["run", &corpus, "--classifier", "noisy:1.5", "--out", o.to_str().unwrap()],
        &["run", &corpus, "--no-such-flag", "--out", o.to_str().unwrap()],
    ];
    for args in cases {
        let out = memcoref(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!csv.exists());
}

#[test]
fn annotated_phase_accepts_the_training_policy() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), &[]);
    let o = dir.path().join("o");
    ok(&["run", &corpus, "--phase", "annotated", "--tau1", "3", "--infer-policy", "saes-train", "--out", o.to_str().unwrap()]);
    assert_eq!(json(&o.join("report.json"))["phase"], "annotated");
}

#[test]
fn data_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen(dir.path(), &[]);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"doc_id\":\"x\",\"tokens\":[\"a\"],\"clusters\":[]}\nnot json\n").unwrap();
    let out = memcoref(&["run", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let other = dir.path().join("other.jsonl");
    std::fs::write(&other, "{\"doc_id\":\"x\",\"tokens\":[\"a\"],\"clusters\":[[[0,0]]]}\n").unwrap();
    let out = memcoref(&["score", "--gold", &corpus, "--pred", other.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let oob = dir.path().join("oob.jsonl");
    std::fs::write(&oob, "{\"doc_id\":\"x\",\"tokens\":[\"a\"],\"clusters\":[[[0,3]]]}\n").unwrap();
    let out = memcoref(&["run", oob.to_str().unwrap(), "--out", dir.path().join("o2").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
