use std::path::Path;
use std::process::{Command, Output};

fn facetpath(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facetpath")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_CFG: &str = r#"{
    "train": {"max_epochs": 4, "patience": 2, "seeds": [1, 2], "walk": {"attempts": 30}},
    "hyper": {"dim": 8, "k_facets": 3, "warmup": {"max_epochs": 3}}
}"#;

#[test]
fn generate_walk_train_attention() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(facetpath(&["gen-synthetic", "--n", "80", "--k", "3", "--classes", "2", "--out", "g"], d));
    assert!(d.join("g/labels.tsv").exists());

    let mut corpora = Vec::new();
    for w in ["1", "4", "8"] {
        let out = format!("paths{w}.tsv");
        ok(facetpath(&["walk", "--graph", "g", "--out", &out, "--attempts", "50", "--seed", "3", "--workers", w], d));
        corpora.push(std::fs::read(d.join(out)).unwrap());
    }
    assert!(!corpora[0].is_empty());
    assert!(corpora.windows(2).all(|w| w[0] == w[1]));

    std::fs::write(d.join("cfg.json"), SMALL_CFG).unwrap();
    let summary = ok(facetpath(
        &["train", "--graph", "g", "--task", "nc", "--config", "cfg.json", "--seed-list", "1,2", "--out", "run"],
        d,
    ));
    assert!(summary.starts_with("axis_value,runs,"));
    let results = std::fs::read_to_string(d.join("run/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    let trace = std::fs::read_to_string(d.join("run/trace.jsonl")).unwrap();
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["seed"].is_u64());
    }

    ok(facetpath(
        &[
            "attention",
            "--graph",
            "g",
            "--checkpoint",
            "run/ckpt-seed2.mf2v",
            "--paths",
            "run/paths-seed2.tsv",
            "--config",
            "cfg.json",
            "--out",
            "att.csv",
        ],
        d,
    ));
    let att = std::fs::read_to_string(d.join("att.csv")).unwrap();
    assert_eq!(att, std::fs::read_to_string(d.join("run/attention-seed2.csv")).unwrap());
    assert!(att.starts_with("node,type,alpha_1,alpha_2,alpha_3\n"));
}

#[test]
fn eval_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("labels.tsv"), "0\t0\n1\t0\n2\t1\n3\t1\n").unwrap();
    std::fs::write(d.join("pred.csv"), "id,pred\n0,0\n1,1\n2,0\n3,1\n").unwrap();
    std::fs::write(d.join("score.csv"), "0,0.1\n1,0.4\n2,0.35\n3,0.8\n").unwrap();
    let f1 = ok(facetpath(&["eval", "--pred", "pred.csv", "--true", "labels.tsv", "--metric", "f1"], d));
    assert_eq!(f1, "micro_f1\t0.5\nmacro_f1\t0.5\n");
    let ari = ok(facetpath(&["eval", "--pred", "pred.csv", "--true", "labels.tsv", "--metric", "ari"], d));
    assert_eq!(ari, "ari\t-0.5\n");
    let auc = ok(facetpath(&["eval", "--pred", "score.csv", "--true", "labels.tsv", "--metric", "auc"], d));
    assert_eq!(auc, "auc\t0.75\n");
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(facetpath(&["gen-synthetic", "--n", "12", "--out", "g"], d));
    let single_k = facetpath(&["timing", "--k", "4", "--graph", "g"], d);
    assert!(!single_k.status.success());
    assert!(String::from_utf8_lossy(&single_k.stderr).contains("at least 3"));

    std::fs::write(d.join("g/edges.tsv"), "0\t1\n0\t999\n").unwrap();
    let bad = facetpath(&["walk", "--graph", "g", "--out", "p.tsv"], d);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("edges.tsv:2"));
}

#[test]
fn ablate_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = r#"{
        "axis": "facet_count", "values": [1, 2],
        "dataset": {"synthetic": {"n_per_type": 80}},
        "base": {"train": {"max_epochs": 2, "seeds": [5], "walk": {"attempts": 20}},
                 "hyper": {"dim": 4, "warmup": {"max_epochs": 2}}}
    }"#;
    std::fs::write(d.join("spec.json"), spec).unwrap();
    ok(facetpath(&["ablate", "--spec", "spec.json", "--out", "report.csv", "--workers", "2"], d));
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}
