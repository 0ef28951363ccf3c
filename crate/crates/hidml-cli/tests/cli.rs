//! End-to-end tests of the `hidml` binary: command wiring, exit codes,
//! config handling, and reproducibility of artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hidml")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn assert_code(out: &Output, want: i32) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout:\n{stdout}\nstderr:\n{stderr}"
    );
}

fn synth_small(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let out = run_in(
        dir,
        &[
            "synth",
            "--d",
            "60",
            "--n",
            "240",
            "--classes",
            "4",
            "--informative",
            "8",
            "--separation",
            "0.8",
            "--noise",
            "0.25",
            "--seed",
            &seed.to_string(),
            "--out",
            "data",
        ],
    );
    assert_code(&out, 0);
    (dir.join("data/train.csv"), dir.join("data/test.csv"))
}

#[test]
fn synth_train_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, test) = synth_small(tmp.path(), 5);
    let out = run_in(
        tmp.path(),
        &[
            "train",
            "--train",
            train.to_str().unwrap(),
            "--val",
            test.to_str().unwrap(),
            "--m",
            "30",
            "--q",
            "50",
            "--r",
            "12",
            "--stages",
            "3",
            "--tau",
            "0.001",
            "--seed",
            "9",
            "--out",
            "run",
        ],
    );
    assert_code(&out, 0);
    for artifact in [
        "run/model.bin",
        "run/history.csv",
        "run/train-summary.json",
        "run/run-manifest.json",
    ] {
        assert!(tmp.path().join(artifact).exists(), "{artifact} missing");
    }
    let history = std::fs::read_to_string(tmp.path().join("run/history.csv")).unwrap();
    assert!(history.starts_with("stage,triplets,obj_before,obj_after,nnz,seconds,val_acc\n"));
    assert_eq!(history.lines().count(), 4, "header plus one row per stage");

    let out = run_in(
        tmp.path(),
        &[
            "evaluate",
            "--model",
            "run/model.bin",
            "--train",
            train.to_str().unwrap(),
            "--test",
            test.to_str().unwrap(),
            "--tau",
            "0.001",
            "--out",
            "eval",
        ],
    );
    assert_code(&out, 0);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("eval/metrics.json")).unwrap())
            .unwrap();
    let acc = metrics["mean_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(metrics["per_class_recall"].as_array().unwrap().len(), 4);
    let preds = std::fs::read_to_string(tmp.path().join("eval/predictions.csv")).unwrap();
    assert!(preds.starts_with("index,predicted,true\n"));
    assert_eq!(preds.lines().count(), 121, "header plus one row per test example");

    // embed, neighbors, and mine-stats all run off the same artifacts
    let out = run_in(
        tmp.path(),
        &["embed", "--model", "run/model.bin", "--data", test.to_str().unwrap(), "--out", "emb"],
    );
    assert_code(&out, 0);
    let coords = std::fs::read_to_string(tmp.path().join("emb/coordinates.csv")).unwrap();
    let first = coords.lines().next().unwrap();
    assert_eq!(first.split(',').count(), 13, "index plus r=12 coordinates");

    let out = run_in(
        tmp.path(),
        &[
            "neighbors",
            "--model",
            "run/model.bin",
            "--train",
            train.to_str().unwrap(),
            "--queries",
            test.to_str().unwrap(),
            "--count",
            "10",
            "--out",
            "nb",
        ],
    );
    assert_code(&out, 0);
    let nb = std::fs::read_to_string(tmp.path().join("nb/neighbors.csv")).unwrap();
    assert!(nb.starts_with("query_index,rank,train_index,distance\n"));
    assert_eq!(nb.lines().count(), 1 + 120 * 10);

    let out = run_in(
        tmp.path(),
        &["mine-stats", "--train", train.to_str().unwrap(), "--out", "ms"],
    );
    assert_code(&out, 0);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("ms/mine-stats.json")).unwrap())
            .unwrap();
    assert!(stats["epoch_size"].as_u64().unwrap() > 0);
    assert_eq!(stats["coordinates"], "euclid");
    assert!(!stats["violation_depth_histogram"].as_array().unwrap().is_empty());
}

#[test]
fn dimension_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, test) = synth_small(tmp.path(), 11);
    let out = run_in(
        tmp.path(),
        &[
            "train",
            "--train",
            train.to_str().unwrap(),
            "--m",
            "20",
            "--q",
            "30",
            "--r",
            "8",
            "--stages",
            "1",
            "--out",
            "run",
        ],
    );
    assert_code(&out, 0);

    // second dataset with a different dimension
    let out = run_in(
        tmp.path(),
        &[
            "synth", "--d", "45", "--n", "60", "--classes", "3", "--informative", "5",
            "--separation", "1.0", "--noise", "0.2", "--seed", "2", "--out", "other",
        ],
    );
    assert_code(&out, 0);
    let out = run_in(
        tmp.path(),
        &[
            "evaluate",
            "--model",
            "run/model.bin",
            "--train",
            "other/train.csv",
            "--test",
            "other/test.csv",
            "--out",
            "eval",
        ],
    );
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("d=60"), "should name the model dimension: {stderr}");
    let _ = test;
}

#[test]
fn identical_seeds_produce_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _) = synth_small(tmp.path(), 7);
    for run in ["a", "b"] {
        let out = run_in(
            tmp.path(),
            &[
                "train",
                "--train",
                train.to_str().unwrap(),
                "--m",
                "25",
                "--q",
                "40",
                "--r",
                "10",
                "--stages",
                "2",
                "--seed",
                "7",
                "--serial",
                "--out",
                run,
            ],
        );
        assert_code(&out, 0);
    }
    let a = std::fs::read(tmp.path().join("a/model.bin")).unwrap();
    let b = std::fs::read(tmp.path().join("b/model.bin")).unwrap();
    assert_eq!(a, b, "model files must be byte-identical");
    let a = std::fs::read(tmp.path().join("a/train-summary.json")).unwrap();
    let b = std::fs::read(tmp.path().join("b/train-summary.json")).unwrap();
    assert_eq!(a, b, "summaries must be byte-identical");
}

#[test]
fn manifest_rerun_reproduces_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, _) = synth_small(tmp.path(), 13);
    let out = run_in(
        tmp.path(),
        &[
            "train", "--train", train.to_str().unwrap(), "--m", "20", "--q", "30", "--r", "8",
            "--stages", "2", "--seed", "21", "--out", "orig",
        ],
    );
    assert_code(&out, 0);
    let out = run_in(
        tmp.path(),
        &["train", "--config", "orig/run-manifest.json", "--out", "rerun"],
    );
    assert_code(&out, 0);
    let a = std::fs::read(tmp.path().join("orig/model.bin")).unwrap();
    let b = std::fs::read(tmp.path().join("rerun/model.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    // unknown flag
    let out = run_in(tmp.path(), &["train", "--no-such-flag"]);
    assert_code(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage") || stderr.contains("usage"), "{stderr}");

    // unknown command
    let out = run_in(tmp.path(), &["frobnicate"]);
    assert_code(&out, 1);

    // out-of-range value, message names the range
    let out = run_in(tmp.path(), &["synth", "--gamma", "2.0", "--out", "x"]);
    assert_code(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gamma") && stderr.contains("(0, 1]"), "{stderr}");

    // q < r is rejected up front
    let out = run_in(tmp.path(), &["train", "--train", "t.csv", "--q", "5", "--r", "9", "--out", "x"]);
    assert_code(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains('q') && stderr.contains('r'), "{stderr}");

    // unknown config key is named
    std::fs::write(tmp.path().join("bad.cfg"), "m = 10\nbogus_key = 3\n").unwrap();
    let out = run_in(tmp.path(), &["train", "--config", "bad.cfg"]);
    assert_code(&out, 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus_key"), "{stderr}");
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("synth.cfg"),
        "# dataset shape\nd = 50\nn = 120\nclasses = 3\ninformative = 6\nseparation = 1.0\nnoise = 0.2\nseed = 4\n",
    )
    .unwrap();
    let out = run_in(
        tmp.path(),
        &["synth", "--config", "synth.cfg", "--n", "90", "--out", "s"],
    );
    assert_code(&out, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("s/run-manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["d"], 50, "file value survives");
    assert_eq!(manifest["n"], 90, "flag overrides file");
    // the resolved config carries all documented defaults
    assert_eq!(manifest["m"], 100);
    assert_eq!(manifest["q"], 600);
    let train = std::fs::read_to_string(tmp.path().join("s/train.csv")).unwrap();
    assert_eq!(train.lines().next().unwrap().split(',').count(), 51);
}

#[test]
fn sparse_datasets_flow_through_training() {
    let tmp = tempfile::tempdir().unwrap();
    let mut content = String::new();
    // two interleaved classes on a 1-D sparse feature plus distractors
    for i in 0..40 {
        let class = i % 2;
        let v = class as f64 * 2.0 + (i as f64) * 0.01;
        content.push_str(&format!("{class} 2:{v} 7:0.5\n"));
    }
    std::fs::write(tmp.path().join("sparse.txt"), content).unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "train", "--train", "sparse.txt", "--sparse", "--sparse-dim", "9", "--m", "5",
            "--q", "9", "--r", "3", "--stages", "2", "--out", "run",
        ],
    );
    assert_code(&out, 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run/run-manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["sparse"], true);
    assert_eq!(manifest["sparse_dim"], 9);
}

#[test]
fn env_var_sets_default_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(bin())
        .current_dir(tmp.path())
        .env("HIDML_OUT", "from-env")
        .args([
            "synth", "--d", "10", "--n", "20", "--classes", "2", "--informative", "2",
            "--separation", "1.0", "--noise", "0.1", "--seed", "1",
        ])
        .output()
        .unwrap();
    assert_code(&out, 0);
    assert!(tmp.path().join("from-env/train.csv").exists());
}

#[test]
fn help_and_version_exit_0() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["--help"]);
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for sub in ["synth", "train", "evaluate", "embed", "neighbors", "mine-stats"] {
        assert!(stdout.contains(sub), "help should list {sub}");
    }
    let out = run_in(tmp.path(), &["--version"]);
    assert_code(&out, 0);
}
