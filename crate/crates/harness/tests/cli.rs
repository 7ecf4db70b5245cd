use std::path::Path;
use std::process::{Command, Output};

fn incindex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incindex"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// `gen` plus `init` on a small corpus in a fresh directory.
fn setup(n_docs: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let gen = incindex(
        dir.path(),
        &["--seed", "3", "gen", "--out", "data", "--n-docs", n_docs, "--dim", "8"],
    );
    assert_eq!(gen.status.code(), Some(0), "{}", stderr(&gen));
    let init = incindex(
        dir.path(),
        &[
            "--snapshot",
            "idx.snap",
            "init",
            "--embeddings",
            "data/initial.idsi",
            "--manifest",
            "data/initial.tsv",
        ],
    );
    assert_eq!(init.status.code(), Some(0), "{}", stderr(&init));
    dir
}

#[test]
fn gen_init_eval_pipeline() {
    let dir = setup("60");
    let eval = incindex(
        dir.path(),
        &[
            "--snapshot",
            "idx.snap",
            "eval",
            "--embeddings",
            "data/initial.idsi",
            "--manifest",
            "data/initial.tsv",
        ],
    );
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    let report: serde_json::Value = serde_json::from_str(&stdout(&eval)).unwrap();
    assert_eq!(report["n_orig_queries"], 54 * 2);
    assert_eq!(report["n_new_queries"], 0);
    assert!(report["hits1_new"].is_null());
    assert!(report["mrr10_orig"].as_f64().unwrap() > 0.5);
}

#[test]
fn search_with_k_beyond_index_is_a_data_error() {
    let dir = setup("30");
    let out = incindex(
        dir.path(),
        &["--snapshot", "idx.snap", "search", "--embeddings", "data/new.idsi", "--k", "1000"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("out of range"), "{}", stderr(&out));

    let ok = incindex(
        dir.path(),
        &["--snapshot", "idx.snap", "search", "--embeddings", "data/new.idsi", "--k", "3"],
    );
    assert_eq!(ok.status.code(), Some(0));
    let first: serde_json::Value = serde_json::from_str(stdout(&ok).lines().next().unwrap()).unwrap();
    assert_eq!(first["results"].as_array().unwrap().len(), 3);
}

#[test]
fn stream_writes_one_row_per_checkpoint() {
    let dir = setup("1200");
    let out = incindex(
        dir.path(),
        &[
            "--snapshot",
            "idx.snap",
            "stream",
            "--embeddings",
            "data/new.idsi",
            "--manifest",
            "data/new.tsv",
            "--orig-embeddings",
            "data/initial.idsi",
            "--orig-manifest",
            "data/initial.tsv",
            "--checkpoints",
            "10,100",
            "--out",
            "stream.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("stream.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        "docs_added,hits1_orig,hits5_orig,hits10_orig,mrr10_orig,hits1_new,hits5_new,hits10_new,mrr10_new,cumulative_add_seconds,feasible_fraction"
    );
    assert!(lines[1].starts_with("10,"));
    assert!(lines[2].starts_with("100,"));
}

#[test]
fn add_then_snapshot_round_trip() {
    let dir = setup("30");
    std::fs::copy(dir.path().join("data/new.idsi"), dir.path().join("doc.idsi")).unwrap();
    let add = incindex(
        dir.path(),
        &["--snapshot", "idx.snap", "add", "--doc-id", "fresh", "--embeddings", "doc.idsi"],
    );
    assert_eq!(add.status.code(), Some(0), "{}", stderr(&add));
    let report: serde_json::Value = serde_json::from_str(&stdout(&add)).unwrap();
    assert_eq!(report["doc_id"]["id"], "fresh");

    let again = incindex(
        dir.path(),
        &["--snapshot", "idx.snap", "add", "--doc-id", "fresh", "--embeddings", "doc.idsi"],
    );
    assert_eq!(again.status.code(), Some(2));

    let save = incindex(dir.path(), &["--snapshot", "idx.snap", "snapshot", "save", "--to", "copy.snap"]);
    assert_eq!(save.status.code(), Some(0));
    let load = incindex(dir.path(), &["--snapshot", "other.snap", "snapshot", "load", "--from", "copy.snap"]);
    assert_eq!(load.status.code(), Some(0));
    let stats: serde_json::Value = serde_json::from_str(&stdout(&load)).unwrap();
    assert_eq!(stats["num_docs"], 28);
    assert_eq!(stats["n0"], 27);
    assert_eq!(
        std::fs::read(dir.path().join("idx.snap")).unwrap(),
        std::fs::read(dir.path().join("other.snap")).unwrap()
    );
}

#[test]
fn tune_writes_trials_and_best() {
    let dir = setup("200");
    let out = incindex(
        dir.path(),
        &[
            "--snapshot",
            "idx.snap",
            "tune",
            "--tune-embeddings",
            "data/tune.idsi",
            "--tune-manifest",
            "data/tune.tsv",
            "--orig-embeddings",
            "data/initial.idsi",
            "--orig-manifest",
            "data/initial.tsv",
            "--trials",
            "3",
            "--trials-out",
            "trials.csv",
            "--best-out",
            "best.json",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let trials = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 4);
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("best.json")).unwrap()).unwrap();
    assert!(best["lambda1"].is_f64());

    // The chosen values feed straight back in through --hyperparams.
    let stream = incindex(
        dir.path(),
        &[
            "--snapshot",
            "idx.snap",
            "--hyperparams",
            "best.json",
            "stream",
            "--embeddings",
            "data/new.idsi",
            "--manifest",
            "data/new.tsv",
            "--orig-embeddings",
            "data/initial.idsi",
            "--orig-manifest",
            "data/initial.tsv",
            "--checkpoints",
            "5",
        ],
    );
    assert_eq!(stream.status.code(), Some(0), "{}", stderr(&stream));
    assert_eq!(stdout(&stream).lines().count(), 2);
}

#[test]
fn usage_errors_exit_one_with_help() {
    let dir = tempfile::tempdir().unwrap();
    let bad = incindex(dir.path(), &["frobnicate"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("Usage:"));

    let missing = incindex(dir.path(), &["eval", "--embeddings", "a", "--manifest", "b"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("--snapshot"));

    let help = incindex(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("serve"));
}

#[test]
fn missing_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = incindex(
        dir.path(),
        &["--snapshot", "nope.snap", "search", "--embeddings", "q.idsi"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_is_byte_identical_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = incindex(dir.path(), &["--seed", "9", "gen", "--out", out, "--n-docs", "40", "--dim", "6"]);
        assert_eq!(o.status.code(), Some(0));
    }
    for part in ["initial", "new", "tune"] {
        for ext in ["idsi", "tsv"] {
            let name = format!("{part}.{ext}");
            assert_eq!(
                std::fs::read(dir.path().join("a").join(&name)).unwrap(),
                std::fs::read(dir.path().join("b").join(&name)).unwrap(),
                "{name}"
            );
        }
    }
}
