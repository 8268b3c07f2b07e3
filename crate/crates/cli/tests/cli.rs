use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SYNTH: &str = "num_users = 40\nnum_items = 120\nnum_interests = 4\ninterests_per_user = 2\n\
                     num_categories = 2\nseq_len = 6\nrounds = 2\nseed = 1\n";
const TRAIN: &str = "# tiny run\nd_orig = 4\nd_aux = 4\nmax_len = 6\nnum_negatives = 3\n\
                     batch_size = 16\nepochs = 1\nlearning_rate = 0.01\n";

fn iacn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iacn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(ws.path("synth.cfg"), SYNTH).unwrap();
        fs::write(ws.path("train.cfg"), TRAIN).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_flag_errors() {
    assert_eq!(code(&iacn(&["--help"])), 0);
    assert_eq!(code(&iacn(&["--version"])), 0);
    assert_eq!(code(&iacn(&[])), 1);
    assert_eq!(code(&iacn(&["frobnicate"])), 1);
    assert_eq!(code(&iacn(&["gradcheck", "--bogus"])), 1);
    // --config is required for train, sweep-delta and ablate-length
    assert_eq!(code(&iacn(&["train", "--synth", "x", "--out", "y"])), 1);
    assert_eq!(code(&iacn(&["sweep-delta", "--synth", "x", "--out", "y"])), 1);
    assert_eq!(code(&iacn(&["ablate-length", "--out", "y"])), 1);
    // --data and --synth are alternatives
    assert_eq!(code(&iacn(&["train", "--config", "c", "--out", "y"])), 1);
}

#[test]
fn missing_config_names_the_path() {
    let ws = Workspace::new();
    let missing = ws.arg("missing.cfg");
    let o = iacn(&[
        "train",
        "--config",
        &missing,
        "--synth",
        &ws.arg("synth.cfg"),
        "--out",
        &ws.arg("o"),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));
}

#[test]
fn invalid_config_values_are_configuration_errors() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.cfg"), "delta = 1.5\n").unwrap();
    fs::write(ws.path("unknown.cfg"), "learning_rat = 0.1\n").unwrap();
    for cfg in ["bad.cfg", "unknown.cfg"] {
        let o = iacn(&[
            "train",
            "--config",
            &ws.arg(cfg),
            "--synth",
            &ws.arg("synth.cfg"),
            "--out",
            &ws.arg("o"),
        ]);
        assert_eq!(code(&o), 1, "{cfg}: {}", stderr(&o));
        assert!(stderr(&o).contains(cfg));
    }
}

#[test]
fn diverging_training_is_a_runtime_error() {
    let ws = Workspace::new();
    fs::write(
        ws.path("hot.cfg"),
        format!("{TRAIN}optimizer = sgd\nlearning_rate = 1e300\n").replace("learning_rate = 0.01\n", ""),
    )
    .unwrap();
    let o = iacn(&[
        "train",
        "--config",
        &ws.arg("hot.cfg"),
        "--synth",
        &ws.arg("synth.cfg"),
        "--out",
        &ws.arg("o"),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!ws.path("o/report.json").exists());
}

#[test]
fn gen_data_is_reproducible() {
    let ws = Workspace::new();
    for out in ["a", "b"] {
        let o = iacn(&[
            "gen-data",
            "--config",
            &ws.arg("synth.cfg"),
            "--out",
            &ws.arg(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(o.stdout.is_empty());
    }
    let a = fs::read(ws.path("a/dataset.cache")).unwrap();
    assert_eq!(a, fs::read(ws.path("b/dataset.cache")).unwrap());
    let vocab = json(&ws.path("a/vocab.json"));
    assert_eq!(vocab["items"].as_array().unwrap().len(), 120);
    assert!(ws.path("a/synth.cfg").exists());

    let o = iacn(&[
        "gen-data",
        "--config",
        &ws.arg("synth.cfg"),
        "--seed",
        "9",
        "--out",
        &ws.arg("c"),
    ]);
    assert_eq!(code(&o), 0);
    assert_ne!(a, fs::read(ws.path("c/dataset.cache")).unwrap());
}

#[test]
fn train_then_eval_agree_and_rerun_bit_exactly() {
    let ws = Workspace::new();
    assert_eq!(
        code(&iacn(&[
            "gen-data",
            "--config",
            &ws.arg("synth.cfg"),
            "--out",
            &ws.arg("data")
        ])),
        0
    );
    let mut reports = Vec::new();
    for out in ["r1", "r2"] {
        let o = iacn(&[
            "train",
            "--config",
            &ws.arg("train.cfg"),
            "--data",
            &ws.arg("data"),
            "--seed",
            "4",
            "--out",
            &ws.arg(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(o.stdout.is_empty());
        let mut r = json(&ws.path(&format!("{out}/report.json")));
        assert_eq!(r["seed"], 4);
        r.as_object_mut().unwrap().remove("wall_seconds");
        r.as_object_mut().unwrap().remove("checkpoint");
        reports.push(r);
        assert!(fs::read_to_string(ws.path(&format!("{out}/metrics.csv")))
            .unwrap()
            .starts_with("experiment,"));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(
        fs::read(ws.path("r1/model.ckpt")).unwrap(),
        fs::read(ws.path("r2/model.ckpt")).unwrap()
    );

    let o = iacn(&[
        "eval",
        "--checkpoint",
        &ws.arg("r1/model.ckpt"),
        "--data",
        &ws.arg("data/dataset.cache"),
        "--out",
        &ws.arg("ev"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = json(&ws.path("ev/eval.json"));
    assert_eq!(ev["auc"], reports[0]["test_auc"]);
    assert_eq!(ev["split"], "test");

    // a dataset with another vocabulary does not fit the checkpoint
    fs::write(
        ws.path("other.cfg"),
        SYNTH.replace("num_items = 120", "num_items = 100"),
    )
    .unwrap();
    assert_eq!(
        code(&iacn(&[
            "gen-data",
            "--config",
            &ws.arg("other.cfg"),
            "--out",
            &ws.arg("other")
        ])),
        0
    );
    let o = iacn(&[
        "eval",
        "--checkpoint",
        &ws.arg("r1/model.ckpt"),
        "--data",
        &ws.arg("other"),
        "--out",
        &ws.arg("ev2"),
    ]);
    assert_eq!(code(&o), 1);

    let mut bytes = fs::read(ws.path("r1/model.ckpt")).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(ws.path("broken.ckpt"), bytes).unwrap();
    let o = iacn(&[
        "eval",
        "--checkpoint",
        &ws.arg("broken.ckpt"),
        "--data",
        &ws.arg("data"),
        "--out",
        &ws.arg("ev3"),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ingest_builds_a_dataset() {
    let ws = Workspace::new();
    let mut reviews = String::new();
    let mut meta = String::new();
    for i in 0..6 {
        meta.push_str(&format!(
            r#"{{"asin": "a{i}", "categories": [["Books", "Genre{}"]]}}"#,
            i % 2
        ));
        meta.push('\n');
    }
    for u in 0..4 {
        for t in 0..4 {
            let item = (u + t) % 6;
            reviews.push_str(&format!(
                r#"{{"reviewerID": "u{u}", "asin": "a{item}", "unixReviewTime": {}}}"#,
                1000 + t
            ));
            reviews.push('\n');
        }
    }
    fs::write(ws.path("reviews.json"), reviews).unwrap();
    fs::write(ws.path("meta.json"), meta).unwrap();
    let o = iacn(&[
        "ingest",
        "--reviews",
        &ws.arg("reviews.json"),
        "--meta",
        &ws.arg("meta.json"),
        "--out",
        &ws.arg("am"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = json(&ws.path("am/ingest_stats.json"));
    assert_eq!(stats["records"], 16);
    let vocab = json(&ws.path("am/vocab.json"));
    assert_eq!(vocab["users"].as_array().unwrap().len(), 4);
    assert_eq!(vocab["test_samples"], 8);

    let o = iacn(&[
        "ingest",
        "--reviews",
        &ws.arg("nope.json"),
        "--meta",
        &ws.arg("meta.json"),
        "--out",
        &ws.arg("x"),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sweep_writes_all_delta_rows() {
    let ws = Workspace::new();
    let o = iacn(&[
        "sweep-delta",
        "--config",
        &ws.arg("train.cfg"),
        "--synth",
        &ws.arg("synth.cfg"),
        "--seeds",
        "2",
        "--out",
        &ws.arg("sw"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sweep = json(&ws.path("sw/sweep.json"));
    assert_eq!(sweep["rows"].as_array().unwrap().len(), 10);
    assert_eq!(sweep["seeds"], serde_json::json!([0, 1]));
    let csv = fs::read_to_string(ws.path("sw/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert_eq!(
        fs::read_to_string(ws.path("sw/sweep.txt"))
            .unwrap()
            .lines()
            .count(),
        11
    );

    let o = iacn(&[
        "sweep-delta",
        "--config",
        &ws.arg("train.cfg"),
        "--synth",
        &ws.arg("synth.cfg"),
        "--seeds",
        "1",
        "--out",
        &ws.arg("sw1"),
    ]);
    assert_eq!(code(&o), 1, "one seed cannot give a standard deviation");
}

#[test]
fn gradcheck_passes() {
    let ws = Workspace::new();
    let o = iacn(&["gradcheck", "--out", &ws.arg("gc")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("attention unit") && out.contains("routing map M"));
    assert_eq!(json(&ws.path("gc/gradcheck.json")).as_array().unwrap().len(), 16);
}
