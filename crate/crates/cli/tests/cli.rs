use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/tiny.toml");

fn memnav(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memnav"))
        .env("MEMNAV_OUTPUT_ROOT", root)
        .env("RUST_LOG", "error")
        .args(["--config", TINY])
        .args(args)
        .output()
        .expect("spawn memnav")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = memnav(root, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn missing_map_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = memnav(dir.path(), &["--set", "map=/no/such/maze.txt", "stage1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("map not found"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(memnav(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        memnav(dir.path(), &["--set", "stage2.no_such_key=3", "stage1"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        memnav(dir.path(), &["stage2", "--reward", "sparse"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(memnav(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn stage2_requires_the_stage1_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = memnav(dir.path(), &["stage2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("missing checkpoint"),
        "{}",
        stderr(&out)
    );
    assert!(stderr(&out).contains("reachability.ckpt"));
}

#[test]
fn empty_log_is_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.csv");
    std::fs::write(&log, "").unwrap();
    let out = memnav(dir.path(), &["plot", log.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("malformed log"), "{}", stderr(&out));
    std::fs::write(&log, "batch,mode\n").unwrap();
    assert!(
        stderr(&memnav(dir.path(), &["plot", log.to_str().unwrap()])).contains("malformed log")
    );
}

#[test]
fn stage1_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["--seed", "7", "--output", "a", "stage1"]);
    assert!(stdout.contains("holdout accuracy"));
    ok(dir.path(), &["--seed", "7", "--output", "b", "stage1"]);
    ok(dir.path(), &["--seed", "8", "--output", "c", "stage1"]);
    let ckpt = |d: &str| read(dir.path().join(d).join("reachability.ckpt"));
    assert_eq!(ckpt("a"), ckpt("b"));
    assert_ne!(ckpt("a"), ckpt("c"));
    assert!(dir.path().join("a/stage1_curve.csv").is_file());
}

/// Runs the whole pipeline twice; every output must match byte for byte.
#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["x", "y"] {
        let base = ["--seed", "3", "--output", run];
        for cmd in [
            &["stage1"][..],
            &["stage2"],
            &["stage3", "--reward", "sparse"],
            &["eval"],
            &["eval", "--policy", "random"],
            &["plot"],
            &["replay"],
        ] {
            ok(dir.path(), &[&base[..], cmd].concat());
        }
    }
    let files = [
        "reachability.ckpt",
        "policy_stage2.ckpt",
        "policy_stage3.ckpt",
        "stage2_log.csv",
        "stage3_log.csv",
        "stage2_memory.jsonl",
        "eval_trained_results.csv",
        "eval_trained_summary.json",
        "eval_random_results.csv",
        "eval_random_summary.json",
        "coverage.svg",
        "reward.svg",
        "spl_by_distance.svg",
        "graph.svg",
    ];
    for f in files {
        assert_eq!(
            read(dir.path().join("x").join(f)),
            read(dir.path().join("y").join(f)),
            "{f}"
        );
    }

    let x = dir.path().join("x");
    let svgs = ["coverage.svg", "reward.svg", "graph.svg"].map(|f| read(x.join(f)));
    ok(dir.path(), &["--seed", "3", "--output", "x", "plot"]);
    for (f, before) in ["coverage.svg", "reward.svg", "graph.svg"].iter().zip(svgs) {
        assert_eq!(read(x.join(f)), before, "replot changed {f}");
    }

    let dump = String::from_utf8(read(x.join("stage2_memory.jsonl"))).unwrap();
    let edges = dump
        .lines()
        .filter(|l| l.contains(r#""type":"edge""#))
        .count();
    let svg = String::from_utf8(read(x.join("graph.svg"))).unwrap();
    assert_eq!(svg.matches(r#"class="edge""#).count(), edges);

    let header = String::from_utf8(read(x.join("eval_trained_results.csv"))).unwrap();
    assert!(header.starts_with("goal_id,l_i,s_i,d_i,steps_used\n"));
    assert_eq!(header.lines().count(), 6);
}

#[test]
fn graph_svg_counts_edges_of_a_handmade_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    let mut dump = String::new();
    for i in 0..4 {
        dump.push_str(&format!(
            r#"{{"type":"entry","index":{i},"insert_step":{i},"embedding":[0.0]}}"#
        ));
        dump.push('\n');
    }
    for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)] {
        dump.push_str(&format!(r#"{{"type":"edge","from":{a},"to":{b}}}"#));
        dump.push('\n');
    }
    std::fs::write(out.join("stage2_memory.jsonl"), dump).unwrap();
    ok(dir.path(), &["plot"]);
    let svg = String::from_utf8(read(out.join("graph.svg"))).unwrap();
    assert_eq!(svg.matches(r#"class="edge""#).count(), 5);
    assert_eq!(svg.matches(r#"class="node""#).count(), 4);
}
