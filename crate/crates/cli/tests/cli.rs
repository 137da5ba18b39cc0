use std::fs;
use std::path::{Path, PathBuf};

use vdistill_cli::{run_cli, RunConfig};

const TOY: &str = r#"{
  "spec": {
    "motions": ["translate-right", "translate-left"],
    "shapes": ["square"],
    "height": 8, "width": 8, "channels": 1,
    "min_len": 5, "max_len": 9,
    "train_per_class": 4, "test_per_class": 2,
    "object_size": 3, "noise": 0.0
  },
  "k": 2, "t_syn": 4, "t_real": 8, "real_batch": 2, "iterations": 2,
  "eval": {
    "max_epochs": 2, "patience": 2, "min_delta": 0.0001, "lr": 0.01, "momentum": 0.9,
    "batch_size": 4, "temporal_aug": true, "min_frac": 0.25, "frames": 8
  },
  "feature_epochs": 1,
  "redundancy_batch": 3
}"#;

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work { dir: tempfile::tempdir().unwrap() };
        fs::write(w.path("toy.json"), TOY).unwrap();
        w
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> i32 {
        let mut argv = vec!["vdistill".to_owned()];
        for a in args {
            // paths are given relative to the work dir
            argv.push(match a.strip_prefix('@') {
                Some(rel) => self.path(rel).display().to_string(),
                None => (*a).to_owned(),
            });
        }
        run_cli(argv)
    }
}

/// Relative path -> bytes of every file under `root`.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
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
fn gen_data_is_reproducible() {
    let w = Work::new();
    assert_eq!(w.run(&["gen-data", "--config", "@toy.json", "--out", "@a", "--seed", "7"]), 0);
    assert_eq!(w.run(&["gen-data", "--config", "@toy.json", "--out", "@b", "--seed", "7"]), 0);
    let (a, b) = (tree(&w.path("a")), tree(&w.path("b")));
    assert!(a.iter().any(|(p, _)| p.ends_with("train/manifest.json")));
    assert!(a.iter().any(|(p, _)| p.ends_with("test/manifest.json")));
    assert!(a.iter().any(|(p, _)| p == Path::new("run.json")));
    assert_eq!(a, b);
}

#[test]
fn distill_eval_and_analyze_pipeline() {
    let w = Work::new();
    assert_eq!(w.run(&["gen-data", "--config", "@toy.json", "--out", "@data", "--seed", "1"]), 0);
    let data_before = tree(&w.path("data"));
    for method in ["idtd", "dm"] {
        let out = format!("@run-{method}");
        assert_eq!(w.run(&["distill", "--method", method, "--ipc", "1", "--config", "@toy.json", "--data", "@data", "--out", &out]), 0);
        let dir = w.path(&format!("run-{method}"));
        for f in ["synset/manifest.json", "loss.csv", "run.json"] {
            assert!(dir.join(f).exists(), "{method}: {f}");
        }
    }
    assert_eq!(
        w.run(&["eval", "--syn", "@run-idtd/synset", "--test", "@data/test", "--seeds", "0,1,2", "--config", "@toy.json", "--out", "@ev"]),
        0
    );
    let summary = fs::read_to_string(w.path("ev/summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "variant,mean,std,n_seeds");
    assert!(lines[1].ends_with(",3"));
    assert_eq!(fs::read_to_string(w.path("ev/eval.csv")).unwrap().lines().count(), 4);

    assert_eq!(w.run(&["baseline", "--method", "random", "--config", "@toy.json", "--data", "@data", "--out", "@rand"]), 0);
    assert!(w.path("rand/coreset.json").exists());
    assert_eq!(
        w.run(&["eval", "--syn", "@rand/synset", "--config", "@toy.json", "--data", "@data", "--seeds", "0,1,2", "--out", "@ev-rand"]),
        0
    );
    assert_eq!(
        w.run(&[
            "analyze",
            "--config",
            "@toy.json",
            "--data",
            "@data",
            "--method-eval",
            "@ev/eval.json",
            "--baseline-eval",
            "@ev-rand/eval.json",
            "--out",
            "@an"
        ]),
        0
    );
    let gain = fs::read_to_string(w.path("an/gain.csv")).unwrap();
    assert_eq!(gain.lines().next().unwrap(), "class,R_t,R_IC,gain");
    assert_eq!(gain.lines().count(), 3);
    let analysis: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("an/analysis.json")).unwrap()).unwrap();
    assert!(analysis.get("spearman").is_some());

    // inputs are left untouched
    assert_eq!(tree(&w.path("data")), data_before);
}

#[test]
fn reruns_are_byte_identical() {
    let w = Work::new();
    assert_eq!(w.run(&["gen-data", "--config", "@toy.json", "--out", "@data"]), 0);
    for out in ["@r1", "@r2"] {
        assert_eq!(w.run(&["distill", "--config", "@toy.json", "--data", "@data", "--out", out, "--threads", "1"]), 0);
    }
    assert_eq!(tree(&w.path("r1")), tree(&w.path("r2")));
    for out in ["@e1", "@e2"] {
        assert_eq!(w.run(&["eval", "--syn", "@r1/synset", "--config", "@toy.json", "--data", "@data", "--seeds", "3", "--out", out]), 0);
    }
    assert_eq!(tree(&w.path("e1")), tree(&w.path("e2")));
}

#[test]
fn thread_count_does_not_change_results() {
    let w = Work::new();
    assert_eq!(w.run(&["distill", "--config", "@toy.json", "--out", "@t1", "--threads", "1"]), 0);
    assert_eq!(w.run(&["distill", "--config", "@toy.json", "--out", "@t3", "--threads", "3"]), 0);
    assert_eq!(tree(&w.path("t1")), tree(&w.path("t3")));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let w = Work::new();
    let code =
        w.run(&["ablate", "--config", "@toy.json", "--variants", "full,compress-and-stitch,no-pool", "--seeds", "0", "--out", "@ab"]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(w.path("ab/summary.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, vec!["full", "compress-and-stitch", "no-pool"]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("ab/summary.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
}

#[test]
fn run_json_records_merged_config() {
    let w = Work::new();
    assert_eq!(w.run(&["distill", "--config", "@toy.json", "--out", "@r", "--lr", "0.5", "--module-lr", "0.02", "--seed", "11"]), 0);
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(w.path("r/run.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["lr"], 0.5);
    assert_eq!(record["config"]["module_lr"], 0.02);
    assert_eq!(record["config"]["k"], 2);
    assert_eq!(record["seeds"]["master"], 11);
    assert_eq!(record["fingerprint"].as_str().unwrap().len(), 64);
    assert!(record["versions"]["vdistill"].is_string());
    let cfg: RunConfig = serde_json::from_value(record["config"].clone()).unwrap();
    assert_eq!(cfg.lr, 0.5);
}

#[test]
fn config_round_trips() {
    let cfg: RunConfig = serde_json::from_str(TOY).unwrap();
    let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    let default = RunConfig::default();
    assert_eq!(serde_json::from_str::<RunConfig>(&serde_json::to_string(&default).unwrap()).unwrap(), default);
}

#[test]
fn errors_exit_nonzero() {
    let w = Work::new();
    assert_ne!(w.run(&["bogus"]), 0);
    assert_ne!(w.run(&["gen-data", "--out", "@x", "--no-such-flag"]), 0);
    assert_ne!(w.run(&["gen-data", "--config", "@missing.json", "--out", "@x"]), 0);
    fs::write(w.path("bad.json"), r#"{"ipc": 0}"#).unwrap();
    assert_ne!(w.run(&["distill", "--config", "@bad.json", "--out", "@x"]), 0);
    fs::write(w.path("typo.json"), r#"{"ipcs": 1}"#).unwrap();
    assert_ne!(w.run(&["distill", "--config", "@typo.json", "--out", "@x"]), 0);
    assert_ne!(w.run(&["distill", "--method", "herding", "--config", "@toy.json", "--out", "@x"]), 0);
    assert_ne!(w.run(&["ablate", "--config", "@toy.json", "--variants", "nonsense", "--out", "@x"]), 0);
    assert_ne!(w.run(&["eval", "--syn", "@nowhere", "--out", "@x"]), 0);
    assert_ne!(w.run(&["distill", "--config", "@toy.json", "--out", "@x", "--threads", "0"]), 0);
    assert_eq!(w.run(&["--help"]), 0);
}
