use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hoamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoamp"))
        .args(args)
        .env_remove("HOAMP_CAP")
        .output()
        .expect("binary runs")
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn min_consensus_on_complete_rounds_decides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = hoamp(&[
        "simulate", "--n", "3", "--f", "1", "--protocol", "min-consensus", "--generator", "complete",
        "--task", "consensus", "--values", "1,2,3", "-o", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&path);
    assert_eq!(r["all_decided"], true);
    assert_eq!(r["task_ok"], true);
    assert_eq!(r["run"]["outputs"], serde_json::json!([1, 1, 1]));
}

#[test]
fn malformed_schedule_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("s.json");
    std::fs::write(&bad, "{\"n\": 3, \"f\": 1, \"prefix\": [[[1]]").unwrap();
    let out = hoamp(&["simulate", "--n", "3", "--f", "1", "--schedule", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse"));

    // well-formed JSON, but vertex 1 hears only itself
    std::fs::write(&bad, r#"{"n": 3, "f": 1, "prefix": [], "cycle": [[[1], [1, 2], [1, 2, 3]]]}"#).unwrap();
    let out = hoamp(&["simulate", "--n", "3", "--f", "1", "--schedule", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_flag_exits_two() {
    assert_eq!(code(&hoamp(&["simulate", "--bogus"])), 2);
    assert_eq!(code(&hoamp(&["explore", "--n", "3", "--f", "1", "--protocol", "nope", "--task", "consensus", "--depth", "1"])), 2);
}

#[test]
fn separation_blocks_the_two_silenced_hosts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = hoamp(&[
        "simulate", "--model", "amp-in-sfho", "--protocol", "echo-amp", "--generator", "separation", "--n", "5",
        "--f", "2", "-o", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&path);
    assert_eq!(r["blocked"], serde_json::json!([4, 5]));
    assert_eq!(r["sfho_faulty"], serde_json::json!([4, 5]));
    assert_eq!(r["blocked_match_silenced"], true);
}

#[test]
fn lemma_suites_pass_exhaustively_and_catch_a_mutant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let out = hoamp(&["check-lemmas", "--n", "3", "--f", "1", "--exhaustive-depth", "2", "-o", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&path)["lassos"], 1485);

    let out = hoamp(&["check-lemmas", "--n", "5", "--f", "2", "--samples", "2000", "--seed", "9", "-o", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(report(&path)["lemma3_violations"], 0);

    let cx = dir.path().join("cx.json");
    let out = hoamp(&[
        "check-lemmas", "--n", "3", "--f", "1", "--exhaustive-depth", "1", "--mutate", "--counterexample",
        cx.to_str().unwrap(), "-o", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    // the emitted lasso replays through the silence analysis
    let out = hoamp(&["analyze-silence", "--n", "3", "--f", "1", "--schedule", cx.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
}

#[test]
fn explore_reports_and_writes_a_replayable_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let cx = dir.path().join("cx.json");
    let path = dir.path().join("r.json");
    let out = hoamp(&[
        "explore", "--protocol", "decide-own", "--task", "consensus", "--n", "3", "--f", "1", "--depth", "1",
        "--counterexample", cx.to_str().unwrap(), "-o", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(report(&path)["verdict"]["violations"].as_u64().unwrap() > 0);
    let out = hoamp(&[
        "simulate", "--n", "3", "--f", "1", "--protocol", "decide-own", "--schedule", cx.to_str().unwrap(),
        "--inputs", &inputs_of(&report(&path)), "--task", "consensus",
    ]);
    assert_eq!(code(&out), 1);

    let out = hoamp(&[
        "explore", "--protocol", "min-consensus", "--task", "kset:2", "--values", "0,1,2", "--n", "3", "--f", "1",
        "--depth", "1", "--mode", "decision", "--jobs", "2",
    ]);
    assert_eq!(code(&out), 0);
}

fn inputs_of(r: &Value) -> String {
    let v = r["verdict"]["counterexample"]["inputs"].as_array().unwrap();
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[test]
fn cap_env_var_overrides_the_default() {
    let out = Command::new(env!("CARGO_BIN_EXE_hoamp"))
        .args(["graphs", "enumerate", "--n", "3", "--f", "1"])
        .env("HOAMP_CAP", "10")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    let out = hoamp(&["graphs", "count", "--n", "4", "--f", "1"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn separation_toy_collides_and_renaming_stays_undecided() {
    assert_eq!(code(&hoamp(&["separate", "--n", "5", "--f", "2", "--protocol", "mod-n"])), 0);
    assert_eq!(code(&hoamp(&["separate", "--n", "5", "--f", "2", "--protocol", "renaming", "--budget", "12"])), 1);
}

#[test]
fn rand_separate_seed_replays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let out = hoamp(&[
            "rand-separate", "--n", "5", "--f", "2", "--trials", "2000", "--samples", "400", "--seed", "4", "-o",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(report(&a), report(&b));
}
