use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikinggat::graph::{sgf, write_dataset, Task};
use spikinggat::synthetic::{self, SbmSpec};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikinggat")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> Option<i32> {
    o.status.code()
}

/// A single-graph node dataset of one SBM graph.
fn node_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("node");
    let spec = SbmSpec {
        min_nodes: 40,
        max_nodes: 40,
        ..SbmSpec::default()
    };
    let g = synthetic::sbm_corpus(1, &spec, 0);
    write_dataset(&path, &g, Task::Node, &synthetic::random_splits(40, 0.5, 0.25, 0)).unwrap();
    path
}

fn edge_dataset(dir: &Path) -> PathBuf {
    let path = dir.join("edge");
    let g = synthetic::geometric_edge_corpus(10, 12, 3, 0);
    write_dataset(&path, &g, Task::Edge, &synthetic::random_splits(10, 0.6, 0.2, 0)).unwrap();
    path
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.cfg");
    fs::write(
        &path,
        format!("hidden_dims=4\nheads=2\noutput_heads=2\ntime_steps=4\nepochs=3\nseeds=0,1\n{extra}"),
    )
    .unwrap();
    path
}

fn train(data: &Path, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--dataset", s(data), "--config", s(cfg), "--out", s(out)];
    args.extend_from_slice(extra);
    bin(&args)
}

#[test]
fn missing_dataset_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let cfg = small_config(dir.path(), "");
    let o = train(&missing, &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = node_dataset(dir.path());
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    assert_eq!(code(&train(&data, &cfg, &out, &["--override", "no_such_key=1"])), Some(1));
    assert_eq!(code(&train(&data, &cfg, &out, &["--override", "threshold=-1"])), Some(1));
    assert_eq!(code(&train(&data, &dir.path().join("missing.cfg"), &out, &[])), Some(1));
    // An edge task needs the pair head.
    let edges = edge_dataset(dir.path());
    assert_eq!(code(&train(&edges, &cfg, &out, &[])), Some(1));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = node_dataset(dir.path());
    let cfg = small_config(dir.path(), "");
    let o = train(&data, &cfg, &dir.path().join("out"), &["--override", "lr=1e38", "--override", "epochs=20"]);
    assert_eq!(code(&o), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn one_epoch_gives_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let data = node_dataset(dir.path());
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = train(&data, &cfg, &out, &["--override", "epochs=1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (i, seed) in [(0, 0), (1, 1)] {
        let csv = fs::read_to_string(out.join(format!("metrics_trial{i}_seed{seed}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(out.join(format!("checkpoint_trial{i}.ckpt")).is_file());
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("node,spiking,2,"));
}

#[test]
fn resolved_config_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = node_dataset(dir.path());
    let cfg = small_config(dir.path(), "dropout=0.3\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train(&data, &cfg, &a, &["--seeds", "3..5", "--parallel-trials", "2"]).status.success());
    let resolved = a.join("run.cfg.resolved");
    assert!(train(&data, &resolved, &b, &[]).status.success());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(fs::read(&resolved).unwrap(), fs::read(b.join("run.cfg.resolved")).unwrap());
    assert!(a.join("metrics_trial1_seed4.csv").is_file());
}

#[test]
fn eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = node_dataset(dir.path());
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    assert!(train(&data, &cfg, &out, &[]).status.success());
    let ckpt = out.join("checkpoint_trial0.ckpt");

    let o = bin(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data)]);
    let line = String::from_utf8_lossy(&o.stdout).trim().to_string();
    let acc: f64 = line.strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(line.len(), "accuracy=0.0000".len());

    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for e in [&e1, &e2] {
        let o = bin(&["export-embeddings", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(e)]);
        assert!(o.status.success());
    }
    let emb = sgf::read_file(&e1.join("embeddings.bin")).unwrap();
    assert_eq!((emb.rows, emb.cols), (40, 8));
    assert_eq!(fs::read_to_string(e1.join("labels.txt")).unwrap().lines().count(), 40);
    assert_eq!(fs::read(e1.join("embeddings.bin")).unwrap(), fs::read(e2.join("embeddings.bin")).unwrap());

    // A checkpoint for a different feature width.
    let edges = edge_dataset(dir.path());
    let o = bin(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&edges)]);
    assert_eq!(code(&o), Some(1));
}

#[test]
fn edge_task_reports_f1() {
    let dir = tempfile::tempdir().unwrap();
    let data = edge_dataset(dir.path());
    let cfg = small_config(dir.path(), "head=mlp\nmlp_hidden=6\n");
    let out = dir.path().join("out");
    let o = train(&data, &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = bin(&["eval", "--checkpoint", s(&out.join("checkpoint_trial1.ckpt")), "--dataset", s(&data)]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("f1_binary="));
}

#[test]
fn gradcheck_exit_codes() {
    let o = bin(&["gradcheck"]);
    assert_eq!(code(&o), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("layer0.weight"));
    assert_eq!(code(&bin(&["gradcheck", "--inject-bug"])), Some(3));
    let o = bin(&["gradcheck", "--tol", "1e-12"]);
    assert_eq!(code(&o), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gradient check failed"));
}

#[test]
fn info_prints_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = node_dataset(dir.path());
    let o = bin(&["info", "--dataset", s(&data)]);
    let text = String::from_utf8_lossy(&o.stdout);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("Dataset"));
    let row: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(&row[..3], &["node", "1", "40"]);
    assert_eq!(&row[6..], &["20", "10", "10"]);
}
