//! End-to-end runs of the `hierembed` binary on small inputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hierembed"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn hierembed")
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = run(cwd, args);
    assert!(
        out.status.success(),
        "`hierembed {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find(|l| l.starts_with("error kind="))
        .unwrap_or_else(|| panic!("no error line in {stderr}"));
    line["error kind=".len()..].split(':').next().unwrap().to_string()
}

fn tsv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

fn small_joint(dir: &Path) {
    ok(dir, &["gen-tree", "--levels", "3", "--branching", "2", "--out", "tree"]);
    ok(dir, &["gen-features", "--tree", "tree", "--per-leaf", "5", "--dim", "6", "--out", "features"]);
    ok(dir, &["train-joint", "--tree", "tree", "--features", "features", "--geometry", "ec", "--dim", "3", "--epochs", "3", "--out", "joint"]);
}

#[test]
fn classify_emits_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    small_joint(dir.path());
    ok(dir.path(), &["classify", "--tree", "tree", "--features", "features", "--model", "joint/model.bin", "--split-file", "joint/instance_split.tsv", "--out", "classify"]);

    let level_of: BTreeMap<String, String> =
        tsv(&dir.path().join("tree/nodes.tsv")).into_iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    let test_ids: Vec<String> = tsv(&dir.path().join("joint/instance_split.tsv"))
        .into_iter()
        .filter(|r| r[1] == "test")
        .map(|r| r[0].clone())
        .collect();
    let rows = tsv(&dir.path().join("classify/predictions.tsv"));
    assert!(!test_ids.is_empty());
    assert_eq!(rows.len(), 3 * test_ids.len());
    let mut seen: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in &rows {
        assert_eq!(level_of[&r[2]], r[1], "label {} predicted on level {}", r[2], r[1]);
        assert!(r[3].parse::<f64>().unwrap() >= 0.0);
        seen.entry(&r[0]).or_default().push(&r[1]);
    }
    assert_eq!(seen.len(), test_ids.len());
    assert!(seen.values().all(|levels| levels == &["1", "2", "3"]));
}

#[test]
fn failures_report_an_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(dir.path(), &["split", "--tree", "nowhere", "--out", "split"]);
    assert_eq!(error_kind(&missing), "io");

    small_joint(dir.path());
    let bad_init = run(
        dir.path(),
        &["train-joint", "--tree", "tree", "--features", "features", "--dim", "3", "--epochs", "1", "--init-from-labels", "absent.emb", "--out", "j2"],
    );
    assert_eq!(error_kind(&bad_init), "inconsistent");

    std::fs::write(dir.path().join("tree/edges.tsv"), "parent_id\tchild_id\n0\t99\n").unwrap();
    let broken = run(dir.path(), &["split", "--tree", "tree", "--out", "split"]);
    assert!(!broken.status.success());
    assert!(String::from_utf8_lossy(&broken.stderr).contains("error kind="));
}

#[test]
fn ethec_metadata_converts() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "a.jpg": {"family": "Pieridae", "subfamily": "Pierinae", "genus": "Pieris", "specific_epithet": "rapae"},
        "b.jpg": {"family": "Pieridae", "subfamily": "Pierinae", "genus": "Pieris", "specific_epithet": "napi"},
        "c.jpg": {"family": "Nymphalidae", "subfamily": "Satyrinae", "genus": "Erebia", "specific_epithet": "aethiops"}
    }"#;
    std::fs::write(dir.path().join("meta.json"), json).unwrap();
    ok(dir.path(), &["convert-ethec", "--input", "meta.json", "--out", "ethec"]);

    let nodes = tsv(&dir.path().join("ethec/nodes.tsv"));
    assert_eq!(nodes.len(), 9);
    assert_eq!(tsv(&dir.path().join("ethec/edges.tsv")).len(), 7);
    let levels = tsv(&dir.path().join("ethec/instances-levels.tsv"));
    assert_eq!(levels.len(), 3);
    assert_eq!(levels[0][1], "a.jpg");
    let name_of: BTreeMap<&str, &str> = nodes.iter().map(|r| (r[0].as_str(), r[2].as_str())).collect();
    assert_eq!(name_of[levels[0][5].as_str()], "Pieris_rapae");

    // the converted tree feeds straight into the rest of the pipeline
    ok(dir.path(), &["split", "--tree", "ethec", "--out", "split"]);
}

#[test]
fn rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-tree", "--levels", "3", "--branching", "3", "--out", "tree"]);
    ok(dir.path(), &["split", "--tree", "tree", "--seed", "2", "--out", "split"]);
    ok(dir.path(), &["train-labels", "--tree", "tree", "--split", "split", "--dim", "3", "--epochs", "10", "--seed", "2", "--out", "labels"]);
    let read = |f: &str| std::fs::read(dir.path().join("labels").join(f)).unwrap();
    let (emb, metrics) = (read("labels.emb"), read("edge_metrics.csv"));
    std::fs::remove_file(dir.path().join("labels/labels.emb")).unwrap();
    ok(dir.path(), &["rerun", "labels/config.json"]);
    assert_eq!(read("labels.emb"), emb);
    assert_eq!(read("edge_metrics.csv"), metrics);
}
