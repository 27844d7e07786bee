//! Drives the `tzsl` binary end to end on small configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tzsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tzsl")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

/// Small synthetic dataset plus a quick training config pointing at it.
fn setup(root: &Path) -> PathBuf {
    let data = root.join("data");
    let o = tzsl(&[
        "--seed", "2", "--out", p(&data), "gen-data",
        "--num-seen", "4", "--num-unseen", "3", "--feature-dim", "8", "--attribute-dim", "5",
        "--seen-per-class", "30", "--unseen-per-class", "40,20,10", "--latent-rank", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = root.join("cfg.json");
    let text = serde_json::json!({
        "train": {"hidden_width": 16, "epochs_inductive": 2, "epochs_transductive": 2, "batch_size": 16,
                  "synth_per_class_train": 20, "synth_per_class_eval": 20, "classifier_epochs": 3,
                  "checkpoint_every": 2, "prior_mode": "cpe"},
        "data": {"path": p(&data)}
    });
    fs::write(&cfg, text.to_string()).unwrap();
    cfg
}

#[test]
fn gen_data_summary_and_determinism() {
    let root = tempfile::tempdir().unwrap();
    let run = |out: &str| {
        let o = tzsl(&["--seed", "9", "--out", p(&root.path().join(out)), "gen-data", "--unseen-per-class", "30,10"
            , "--num-unseen", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let summary = run("a");
    run("b");
    assert_eq!(summary["unseen_class_counts"], serde_json::json!([30, 10]));
    assert_eq!(summary["unseen_prior"], serde_json::json!([0.75, 0.25]));
    for entry in fs::read_dir(root.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(root.path().join("a").join(&name)).unwrap(),
            fs::read(root.path().join("b").join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
    let ds = tzsl::dataspace::load_dataset(&root.path().join("a"), &Default::default()).unwrap();
    assert_eq!(ds.num_unseen_classes(), 2);
}

#[test]
fn unknown_config_key_exits_one_naming_the_key() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    fs::write(&cfg, r#"{"train": {"batch_size": 8, "lamda": 1.0}}"#).unwrap();
    let o = tzsl(&["--config", p(&cfg), "--out", p(&root.path().join("out")), "train"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));

    let o = tzsl(&["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let root = tempfile::tempdir().unwrap();
    let o = tzsl(&[
        "--out", p(root.path()), "eval", "--checkpoint", p(&root.path().join("none")), "--data", p(root.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("none"), "{}", stderr(&o));
}

#[test]
fn train_eval_prior_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let cfg = setup(root.path());
    let out = root.path().join("run");
    let o = tzsl(&["--config", p(&cfg), "--out", p(&out), "train"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let report = read_json(out.join("report.json"));
    assert_eq!(report["prior_mode"], "cpe");
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    // the echoed config has every default filled in
    let echoed = read_json(out.join("config.json"));
    assert_eq!(echoed["train"]["critic_steps"], 5);
    assert_eq!(echoed["train"]["seed"], 0);
    // one prior snapshot per transductive epoch
    let priors = fs::read_to_string(out.join("priors.jsonl")).unwrap();
    assert_eq!(priors.lines().count(), 2);
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let first: Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["phase"], "inductive");
    assert!(first["level2_total"].is_number());
    assert!(out.join("checkpoints/epoch_0002/manifest.json").exists());
    assert!(out.join("checkpoints/epoch_0004/manifest.json").exists());

    let ckpt = out.join("checkpoint");
    let data = root.path().join("data");
    let eval = |dest: &str, mode: &str| {
        let o = tzsl(&["--out", p(&root.path().join(dest)), "eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--mode", mode]);
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    let spaces: Vec<Value> = serde_json::from_slice(&eval("e1", "spaces")).unwrap();
    let names: Vec<&str> = spaces.iter().map(|r| r["inference_space"].as_str().unwrap()).collect();
    assert_eq!(names, ["attribute", "hidden", "visual", "concatenated"]);
    assert_eq!(eval("e2", "gtzsl"), eval("e3", "gtzsl"));
    let g: Vec<Value> = serde_json::from_slice(&eval("e4", "gtzsl")).unwrap();
    assert!(g[0]["harmonic_mean"].is_number());

    let o = tzsl(&[
        "--out", p(&root.path().join("pr")), "prior", "--checkpoint", p(&ckpt), "--data", p(&data),
        "--method", "bbse", "--trials", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trials = fs::read_to_string(root.path().join("pr/prior_trials.jsonl")).unwrap();
    assert_eq!(trials.lines().count(), 4);
    let summary = read_json(root.path().join("pr/prior_summary.json"));
    assert_eq!(summary["trials"], 4);
    assert!(summary["failures"].as_u64().unwrap() < 4 || summary["tv_mean"].is_null());

    // a dataset with a different attribute width is rejected with both widths named
    let other = root.path().join("other");
    assert!(tzsl(&["--out", p(&other), "gen-data", "--num-seen", "4", "--num-unseen", "3", "--feature-dim", "8",
        "--attribute-dim", "6", "--seen-per-class", "10", "--unseen-per-class", "10"]).status.success());
    let o = tzsl(&["eval", "--checkpoint", p(&ckpt), "--data", p(&other)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("d_a=5") && err.contains("d_a=6"), "{err}");
}

#[test]
fn norm_experiment_writes_plot_data() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("cfg.json");
    let spec = serde_json::json!({
        "train": {"hidden_width": 16, "epochs_transductive": 3, "batch_size": 16, "latent_dim": 4,
                  "synth_per_class_train": 20, "synth_per_class_eval": 20, "classifier_epochs": 2},
        "data": {"synthetic": {"seed": 1, "spec": {"num_seen": 3, "num_unseen": 2, "feature_dim": 6,
                 "attribute_dim": 4, "seen_per_class": 10, "unseen_per_class": [20, 10], "separation": 5.0, "noise": 0.5}}}
    });
    fs::write(&cfg, spec.to_string()).unwrap();
    let out = root.path().join("norm");
    let o = tzsl(&["--config", p(&cfg), "--out", p(&out), "norm-exp"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(out.join("norm_report.json"));
    assert_eq!(report["l2"]["accuracy_per_epoch"].as_array().unwrap().len(), 3);
    let hist = fs::read_to_string(out.join("norm_histograms.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,l2_real,l2_synthesized,min_max_real,min_max_synthesized"));
    assert_eq!(hist.lines().count(), 51);
    let acc = fs::read_to_string(out.join("norm_accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 4);
}
