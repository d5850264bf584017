use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medgrad_core::checkpoint;
use medgrad_core::explain::render::grid_size;
use medgrad_core::model::ClipModel;

const SMALL: &str = r#"{
  "model": {"image_size": 32, "vision_dim": 32, "text_dim": 32, "embed_dim": 32, "context_length": 16},
  "train": {"batch_size": 16}
}"#;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.json"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path("config.json");
        Command::new(env!("CARGO_BIN_EXE_medgrad"))
            .arg("--config")
            .arg(&config)
            .args(args)
            .env("MEDGRAD_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn fails(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
        String::from_utf8(out.stderr).unwrap()
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_string_lossy().into_owned()
    }

    /// Dataset of `n` pairs plus a checkpoint trained for `epochs`.
    fn trained(&self, n: usize, epochs: usize) {
        self.ok(&["gen-data", "--out", &self.s("data"), "--n-pairs", &n.to_string()]);
        self.ok(&[
            "train",
            "--data",
            &self.s("data"),
            "--out",
            &self.s("model.ckpt"),
            "--epochs",
            &epochs.to_string(),
        ]);
    }
}

fn hash_line(stdout: &str) -> String {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("content hash "))
        .unwrap()
        .to_string()
}

#[test]
fn gen_data_is_balanced_and_repeatable() {
    let env = Env::new();
    let a = env.ok(&["gen-data", "--out", &env.s("a"), "--n-pairs", "40"]);
    let b = env.ok(&["gen-data", "--out", &env.s("b"), "--n-pairs", "40"]);
    assert_eq!(hash_line(&a), hash_line(&b));
    let manifest = fs::read_to_string(env.path("a/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 40);
    // Eight classes of five.
    let class_lines: Vec<&str> = a.lines().filter(|l| l.starts_with("  ")).collect();
    assert_eq!(class_lines.len(), 8);
    assert!(class_lines.iter().all(|l| l.ends_with(" 5")), "{a}");

    let c = env.ok(&["--seed", "7", "gen-data", "--out", &env.s("c"), "--n-pairs", "40"]);
    assert_ne!(hash_line(&a), hash_line(&c));
}

#[test]
fn gen_data_with_zero_pairs_writes_an_empty_manifest() {
    let env = Env::new();
    env.ok(&["gen-data", "--out", &env.s("empty"), "--n-pairs", "0"]);
    assert_eq!(fs::read_to_string(env.path("empty/manifest.jsonl")).unwrap(), "");
}

#[test]
fn zero_epochs_save_the_initial_model() {
    let env = Env::new();
    env.trained(16, 0);
    let (model, meta) = checkpoint::load(&env.path("model.ckpt")).unwrap();
    let init = ClipModel::<f32>::new(meta.model.clone(), 42).unwrap();
    let bits = |m: &ClipModel<f32>| -> Vec<Vec<u32>> {
        m.params()
            .tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    };
    assert_eq!(bits(&model), bits(&init));
    assert_eq!(fs::read_to_string(env.path("model.ckpt.log.jsonl")).unwrap(), "");
}

#[test]
fn train_eval_explain_compare_round() {
    let env = Env::new();
    env.trained(32, 2);

    let log = fs::read_to_string(env.path("model.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["loss"].as_f64().unwrap().is_finite());
    }

    // Retraining with the same seed reproduces the checkpoint byte for byte.
    env.ok(&[
        "train",
        "--data",
        &env.s("data"),
        "--out",
        &env.s("again.ckpt"),
        "--epochs",
        "2",
    ]);
    assert_eq!(
        fs::read(env.path("model.ckpt")).unwrap(),
        fs::read(env.path("again.ckpt")).unwrap()
    );

    let ckpt = env.s("model.ckpt");
    let data = env.s("data");
    let report = env.ok(&[
        "eval",
        "--checkpoint",
        &ckpt,
        "--data",
        &data,
        "--out",
        &env.s("report.json"),
    ]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    for key in [
        "accuracy",
        "loss",
        "precision",
        "recall",
        "f1",
        "sensitivity",
        "specificity",
        "clip_score",
        "n",
    ] {
        assert!(v.get(key).is_some(), "missing {key} in {report}");
    }
    assert_eq!(v["confusion"].as_array().unwrap().len(), 8);
    assert_eq!(
        fs::read_to_string(env.path("report.json")).unwrap().trim(),
        report.trim()
    );
    assert_eq!(env.ok(&["eval", "--checkpoint", &ckpt, "--data", &data]), report);

    let image = env.s("data/images/syn-00000.png");
    let caption = "melanoma, asymmetric";
    let panel_width = |out: &str, methods: &str| {
        env.ok(&[
            "explain",
            "--checkpoint",
            &ckpt,
            "--image",
            &image,
            "--caption",
            caption,
            "--methods",
            methods,
            "--out",
            out,
        ]);
        image::image_dimensions(Path::new(out)).unwrap().0
    };
    let one = panel_width(&env.s("cam.png"), "grad-cam");
    let all = panel_width(&env.s("all.png"), "medgrad-eclip,grad-eclip,grad-cam");
    // Original plus one map, and original plus three.
    assert_eq!(one as usize, grid_size(1, 2, 32).0);
    assert_eq!(all as usize, grid_size(1, 4, 32).0);
    assert!(env.path("cam.grad-cam.json").exists());
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(env.path("all.medgrad-eclip.json")).unwrap()).unwrap();
    assert_eq!(sidecar["method"], "medgrad-eclip");
    assert_eq!(sidecar["grid"], serde_json::json!([4, 4]));

    let err = env.fails(&[
        "explain",
        "--checkpoint",
        &ckpt,
        "--image",
        &image,
        "--caption",
        caption,
        "--methods",
        "lime",
        "--out",
        &env.s("x.png"),
    ]);
    assert!(
        err.contains("medgrad-eclip") && err.contains("grad-eclip") && err.contains("grad-cam"),
        "{err}"
    );

    env.ok(&[
        "compare",
        "--checkpoint",
        &ckpt,
        "--data",
        &data,
        "--n",
        "1",
        "--out",
        &env.s("cmp"),
    ]);
    assert_eq!(fs::read_dir(env.path("cmp")).unwrap().count(), 1);

    let inspect = env.ok(&["inspect-checkpoint", &ckpt]);
    let v: serde_json::Value = serde_json::from_str(&inspect).unwrap();
    assert_eq!(v["config"]["model"]["image_size"], 32);
    assert!(v["parameters"].as_u64().unwrap() > 0);
}

#[test]
fn corrupt_checkpoint_and_bad_config_are_reported() {
    let env = Env::new();
    env.trained(16, 0);
    let bytes = fs::read(env.path("model.ckpt")).unwrap();
    fs::write(env.path("cut.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    let err = env.fails(&["inspect-checkpoint", &env.s("cut.ckpt")]);
    assert!(err.contains("truncated reading tensor["), "{err}");

    fs::write(env.path("bad.json"), r#"{"train": {"epoch": 3}}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_medgrad"))
        .args(["--config", &env.s("bad.json"), "gen-data", "--out", &env.s("d")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch"), "{err}");
}
