use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use angleshrink::graph::{complete_cell, toy_operators, SupernetGraph};

const CONFIG: &str = r#"schema = "angleshrink-config/v1"
space = "space.json"
seeds = [1]
output_dir = "out"
workers = 1
experiments = ["ranking", "stability", "convergence", "selection", "search"]

[data]
kind = "spirals"
classes = 3
train_size = 48
validation_size = 48
noise = 0.2
seed = 5

[train]
first_stage_epochs = 2
stage_epochs = 1
batch_size = 16
lr = { kind = "constant", lr = 0.05 }
momentum = 0.9
init = "kaiming-normal"
seed = 0

[shrink]
threshold = THRESHOLD
drop_per_iteration = 2
samples = 8
reset_after = 4

[bench]
epochs = 2
seed = 0

[bench.train]
first_stage_epochs = 1
stage_epochs = 1
batch_size = 16
lr = { kind = "constant", lr = 0.05 }
momentum = 0.9
init = "kaiming-normal"
seed = 0

[evaluate]
supernet_epochs = 2
probe_epochs = [0, 2]
ranking_limit = 100
timing_children = 5
timing_repetitions = 3
selection_drop = 2
selection_samples = 8
search_budget = 5
search_trials = 3
evolution = { population = 4, sample_size = 2 }
"#;

/// A three-node cell with three candidates per edge (27 children).
fn setup(dir: &Path, threshold: u64) -> PathBuf {
    complete_cell(3, &toy_operators(9)).unwrap().save(&dir.join("space.json")).unwrap();
    let path = dir.join("config.toml");
    fs::write(&path, CONFIG.replace("THRESHOLD", &threshold.to_string())).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_angleshrink"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bench_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    assert!(run(&["bench"], &cfg).status.success());
    let again = run(&["bench"], &cfg);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("refusing to overwrite"), "{}", stderr(&again));
}

#[test]
fn missing_space_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    fs::remove_file(dir.path().join("space.json")).unwrap();
    let o = run(&["shrink"], &cfg);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("space.json"), "{}", stderr(&o));
}

#[test]
fn one_log_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    let o = run(&["shrink", "--seed", "3", "--seed", "4"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let shrink = dir.path().join("out/shrink");
    for seed in [3, 4] {
        let log = fs::read_to_string(shrink.join(format!("seed-{seed}.jsonl"))).unwrap();
        assert!(log.starts_with(r#"{"type":"start""#));
        assert!(log.contains(&format!(r#""seed":{seed}"#)));
    }
    assert!(!shrink.join("seed-1.jsonl").exists());
}

#[test]
fn threshold_above_size_keeps_the_space() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 27);
    assert!(run(&["shrink"], &cfg).status.success());
    let original = SupernetGraph::load(&dir.path().join("space.json")).unwrap();
    let shrunk = SupernetGraph::load(&dir.path().join("out/shrink/seed-1.space.json")).unwrap();
    assert_eq!(shrunk, original);
    let log = fs::read_to_string(dir.path().join("out/shrink/seed-1.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn evaluate_needs_a_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    let o = run(&["evaluate"], &cfg);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("run the bench command first"), "{}", stderr(&o));
}

#[test]
fn empty_experiment_list_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    let o = run(&["evaluate", "--experiments", ""], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let reports: Vec<_> = fs::read_dir(dir.path().join("out/reports")).unwrap().collect();
    assert_eq!(reports.len(), 2);
    let text = fs::read_to_string(dir.path().join("out/reports/evaluate_summary.txt")).unwrap();
    assert!(text.contains("no experiments selected"));
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    fs::write(&cfg, "schema = \"angleshrink-config/v0\"\n").unwrap();
    assert!(!run(&["shrink"], &cfg).status.success());
    assert!(!run(&["report"], &dir.path().join("absent.toml")).status.success());
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_config_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 5);
    for out in ["a", "b"] {
        for verb in ["bench", "shrink", "evaluate", "report"] {
            let o = run(&[verb, "--out", dir.path().join(out).to_str().unwrap()], &cfg);
            assert!(o.status.success(), "{verb}: {}", stderr(&o));
        }
    }
    let a = files(&dir.path().join("a"));
    let b = files(&dir.path().join("b"));
    assert!(a.iter().any(|(p, _)| p.ends_with("reports/search.json")));
    assert_eq!(a.len(), b.len());
    for ((pa, da), (pb, db)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(da == db, "{} differs between runs", pa.display());
    }
    let report = fs::read_to_string(dir.path().join("a/report.txt")).unwrap();
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("a/reports/ranking.json")).unwrap()).unwrap();
    assert!(report.contains(json["config_hash"].as_str().unwrap()));
    assert_eq!(json["seeds"], serde_json::json!([1]));
}
