use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gem_core::synth::{generate, SynthSpec, TypeSpec};
use gem_core::EmbeddingSet;

fn gem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gem"))
        .args(args)
        .current_dir(dir)
        .env_remove("GEM_SEED")
        .output()
        .expect("gem runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gem(dir, args);
    assert!(
        out.status.success(),
        "gem {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_corpus(dir: &Path) {
    let spec = SynthSpec {
        types: vec![
            TypeSpec::new("a", "normal", &[10.0, 1.0], 4, 200),
            TypeSpec::new("b", "uniform", &[100.0, 200.0], 4, 200),
            TypeSpec::new("c", "exponential", &[2.0], 4, 200),
        ],
    };
    generate(&spec, 1, dir.join("data")).unwrap();
}

fn dims(path: &Path) -> Vec<usize> {
    EmbeddingSet::read(path).unwrap().embeddings.iter().map(|e| e.vector.len()).collect()
}

#[test]
fn fit_writes_a_model_and_prints_restarts() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let stdout = ok(dir.path(), &["fit", "--input", "data/tables", "--components", "50", "--tol", "1e-3", "--restarts", "4", "--seed", "7"]);
    assert_eq!(stdout.matches("log-likelihood").count(), 4);
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
    assert_eq!(model["k"], 50);
    assert_eq!(model["config"]["seed"], 7);
    assert_eq!(model["run_config"]["command"], "fit");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["fit", "--input", "data", "--components", "0"],
        vec!["embed", "--input", "data", "--mode", "Z"],
        vec!["frobnicate"],
        vec![],
    ] {
        assert_eq!(gem(dir.path(), &args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(gem(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn data_and_numerical_errors_have_their_own_codes() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    assert_eq!(gem(dir.path(), &["fit", "--input", "missing"]).status.code(), Some(2));
    ok(dir.path(), &["embed", "--input", "data/tables", "--mode", "ks", "--out", "ks.jsonl"]);
    let out = gem(dir.path(), &["eval", "--embeddings", "ks.jsonl", "--ground-truth", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    // Two distinct values cannot support three components.
    fs::create_dir_all(dir.path().join("flat")).unwrap();
    fs::write(dir.path().join("flat/t.csv"), "x\n1\n2\n1\n2\n").unwrap();
    let out = gem(dir.path(), &["fit", "--input", "flat", "--components", "3"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn embed_vector_lengths_follow_the_mode() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    ok(dir.path(), &["fit", "--input", "data/tables", "--components", "50", "--restarts", "1"]);
    let cases: [(&str, usize); 7] = [
        ("D", 50),
        ("D+S", 57),
        ("D+S+C-concat", 448),
        ("D+S+C-concat-ps", 441),
        ("D+S+C-agg", 384),
        ("ks", 7),
        ("paf", 100),
    ];
    for (mode, len) in cases {
        let out = format!("{mode}.jsonl");
        ok(dir.path(), &["embed", "--input", "data/tables", "--model", "model.json", "--mode", mode, "--fallback-headers", "--out", &out]);
        let d = dims(&dir.path().join(&out));
        assert_eq!(d.len(), 12);
        assert!(d.iter().all(|&x| x == len), "{mode}: {d:?}");
    }
}

#[test]
fn context_modes_require_a_header_source() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    ok(dir.path(), &["fit", "--input", "data/tables", "--components", "4", "--restarts", "1"]);
    let out = gem(dir.path(), &["embed", "--input", "data/tables", "--model", "model.json", "--mode", "D+S+C-concat"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--fallback-headers"));
    let out = gem(dir.path(), &["embed", "--input", "data/tables", "--mode", "D+S"]);
    assert!(!out.status.success());
}

#[test]
fn perfect_separation_scores_one_and_shuffled_labels_score_chance() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        types: (0..5)
            .map(|i| TypeSpec::new(&format!("t{i}"), "normal", &[1000.0 * (i + 1) as f64, 5.0], 12, 150))
            .collect(),
    };
    generate(&spec, 4, dir.path().join("data")).unwrap();
    ok(dir.path(), &["fit", "--input", "data/tables", "--components", "10", "--restarts", "2"]);
    // Types differing only in location: the responsibility block alone
    // separates them.
    ok(dir.path(), &["embed", "--input", "data/tables", "--model", "model.json", "--mode", "D", "--out", "e.jsonl"]);
    ok(dir.path(), &["eval", "--embeddings", "e.jsonl", "--ground-truth", "data/ground_truth.csv"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["macro_precision"], 1.0);
    assert_eq!(report["k_policy"], "support_minus_one");
    assert!(report.get("timestamp").is_none());

    // Random relabeling: a column's k = 11 neighbors are a uniform draw from
    // the other 59 columns, 11 of which share its (shuffled) label, so the
    // expected precision is 11/59.
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let gt = fs::read_to_string(dir.path().join("data/ground_truth.csv")).unwrap();
    let mut lines: Vec<&str> = gt.lines().collect();
    let header = lines.remove(0);
    let keys: Vec<&str> = lines.iter().map(|l| l.rsplit_once(',').unwrap().0).collect();
    let mut labels: Vec<&str> = lines.iter().map(|l| l.rsplit_once(',').unwrap().1).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut total = 0.0;
    let rounds = 20;
    for _ in 0..rounds {
        labels.shuffle(&mut rng);
        let body: Vec<String> = keys.iter().zip(&labels).map(|(k, l)| format!("{k},{l}")).collect();
        fs::write(dir.path().join("shuffled.csv"), format!("{header}\n{}\n", body.join("\n"))).unwrap();
        ok(dir.path(), &["eval", "--embeddings", "e.jsonl", "--ground-truth", "shuffled.csv", "--out", "s.json"]);
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
        total += r["macro_precision"].as_f64().unwrap();
    }
    let mean = total / rounds as f64;
    assert!((mean - 11.0 / 59.0).abs() < 0.03, "mean shuffled precision {mean}");
}

#[test]
fn eval_writes_table_neighbors_and_clustering() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    ok(dir.path(), &["fit", "--input", "data/tables", "--components", "6", "--restarts", "2"]);
    ok(dir.path(), &["embed", "--input", "data/tables", "--model", "model.json", "--mode", "D", "--out", "d.jsonl"]);
    let stdout = ok(dir.path(), &[
        "eval", "--embeddings", "d.jsonl", "--ground-truth", "data/ground_truth.csv", "--clustering", "argmax",
        "--table", "table.txt", "--neighbors", "n.csv", "--timestamp",
    ]);
    assert!(stdout.contains("macro"));
    assert_eq!(fs::read_to_string(dir.path().join("table.txt")).unwrap(), stdout);
    let n = fs::read_to_string(dir.path().join("n.csv")).unwrap();
    assert_eq!(n.lines().count(), 13);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["acc"].as_f64().is_some());
    assert!(report["ari"].as_f64().is_some());
    assert!(report["timestamp"].as_str().unwrap().starts_with("unix:"));

    // Baseline vectors carry no responsibility block.
    ok(dir.path(), &["embed", "--input", "data/tables", "--mode", "ple", "--out", "p.jsonl"]);
    let out = gem(dir.path(), &["eval", "--embeddings", "p.jsonl", "--ground-truth", "data/ground_truth.csv", "--clustering", "argmax"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("responsibilit"));
}

#[test]
fn bench_sorts_candidates_and_reports_spread() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let stdout = ok(dir.path(), &[
        "bench", "--input", "data/tables", "--ground-truth", "data/ground_truth.csv", "--candidates", "6,2,4", "--restarts", "1",
    ]);
    assert!(stdout.contains("spread"));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let ks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, vec!["2", "4", "6"]);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("bench.json")).unwrap()).unwrap();
    assert!(side["spread"].as_f64().unwrap() >= 0.0);
    assert_eq!(side["run_config"]["candidates"], serde_json::json!([6, 2, 4]));

    ok(dir.path(), &[
        "bench", "--input", "data/tables", "--ground-truth", "data/ground_truth.csv", "--candidates", "3", "--restarts", "1", "--out", "one.csv",
    ]);
    assert_eq!(fs::read_to_string(dir.path().join("one.csv")).unwrap().lines().count(), 2);
}

#[test]
fn seed_comes_from_the_environment_unless_given() {
    let dir = tempfile::tempdir().unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gem"));
        cmd.current_dir(dir.path()).args(["synth", "--out", out]).args(extra).env_remove("GEM_SEED");
        if let Some(v) = env {
            cmd.env("GEM_SEED", v);
        }
        assert!(cmd.status().unwrap().success());
        fs::read(dir.path().join(out).join("tables/table_000.csv")).unwrap()
    };
    let from_env = run(Some("5"), &[], "a");
    let from_flag = run(None, &["--seed", "5"], "b");
    let default = run(None, &[], "c");
    assert_eq!(from_env, from_flag);
    assert_ne!(from_env, default);
}

#[test]
fn synth_reads_a_spec_and_rejects_unknown_families() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("spec.json"),
        r#"{"types":[{"label":"x","family":"gamma","params":[2.0,1.0],"columns":3,"rows":10},
                     {"label":"y","family":"beta","params":[1.0,3.0],"columns":2,"rows":10,"header":"share"}]}"#,
    )
    .unwrap();
    ok(dir.path(), &["synth", "--spec", "spec.json", "--out", "s"]);
    let gt = fs::read_to_string(dir.path().join("s/ground_truth.csv")).unwrap();
    assert_eq!(gt.lines().count(), 6);
    assert!(gt.contains("table_001,share,y"));

    fs::write(dir.path().join("bad.json"), r#"{"types":[{"label":"x","family":"zipf","params":[2.0],"columns":1,"rows":5}]}"#).unwrap();
    let out = gem(dir.path(), &["synth", "--spec", "bad.json", "--out", "t"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zipf"));
}
