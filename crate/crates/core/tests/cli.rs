use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shrinkground"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

#[test]
fn parse_query_prints_triads() {
    let o = bin(&["parse-query", "cat above a shelf"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v, serde_json::json!([{"target": "cat", "reference": "shelf", "discriminative": "above"}]));
}

#[test]
fn unknown_word_is_a_validation_failure() {
    assert_eq!(bin(&["parse-query", "the purple cup"]).status.code(), Some(2));
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["gen-data"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_override_is_a_validation_failure() {
    let o = bin(&["parse-query", "lady", "--set", "agent.gamma=2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["parse-query", "lady", "--set", "agent.nothing=2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let o = bin(&["gradcheck", "--seeds", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn gen_data_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let c = dir.path().join("c.jsonl");
    for (p, seed) in [(&a, "4"), (&b, "4"), (&c, "5")] {
        let o = bin(&["gen-data", "--seed", seed, "--count", "25", "--out", path(p)]);
        assert_eq!(o.status.code(), Some(0));
    }
    let a = std::fs::read(a).unwrap();
    assert_eq!(a, std::fs::read(b).unwrap());
    assert_ne!(a, std::fs::read(c).unwrap());
    assert_eq!(a.iter().filter(|&&x| x == b'\n').count(), 25);
}

#[test]
fn train_eval_trace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let small = [
        "--set",
        "curriculum=[{\"episodes\":30}]",
        "--set",
        "eval_size=20",
        "--set",
        "probe_size=5",
        "--set",
        "log_every=10",
        "--set",
        "refiner.steps=50",
    ];
    let mut args = vec!["train", "--run-dir", path(&run)];
    args.extend(small);
    let o = bin(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.json", "metrics.jsonl", "checkpoints/actor.ckpt", "checkpoints/critic.ckpt", "checkpoints/refiner.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count(), 3);

    let o = bin(&["eval", "--run-dir", path(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read(run.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["count"], 20);
    bin(&["eval", "--run-dir", path(&run)]);
    assert_eq!(first, std::fs::read(run.join("report.json")).unwrap());

    let o = bin(&["trace", "--checkpoint", path(&run.join("checkpoints")), "--scene-id", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.join("traces/scene_2.json")).unwrap()).unwrap();
    let steps = trace["steps"].as_array().unwrap().len();
    assert!(steps >= 1);
    assert!(run.join(format!("traces/scene_2_{steps:02}.svg")).exists());

    // a run directory is tied to its vocabulary
    let o = bin(&["eval", "--run-dir", path(&run), "--set", "word_dim=16"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_reads_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let run = dir.path().join("r");
    assert_eq!(bin(&["gen-data", "--count", "12", "--out", path(&data)]).status.code(), Some(0));
    let o = bin(&["eval", "--run-dir", path(&run), "--data", path(&data), "--policy", "oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["count"], 12);

    std::fs::write(&data, "{\"schema_version\": 9}\n").unwrap();
    let o = bin(&["eval", "--run-dir", path(&run), "--data", path(&data), "--policy", "random"]);
    assert_eq!(o.status.code(), Some(2));
}
