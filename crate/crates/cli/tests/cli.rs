use std::path::Path;
use std::process::{Command, Output};

fn sshd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sshd-net")).args(args).env("SSHD_THREADS", "1").env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sshd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_train_infer_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run, dumps) = (dir.path().join("data"), dir.path().join("run"), dir.path().join("maps"));
    let synth_cfg = dir.path().join("synth.json");
    std::fs::write(&synth_cfg, r#"{"height": 16, "width": 16, "seed": 4}"#).unwrap();
    ok(&["synth", "--config", s(&synth_cfg), "--out", s(&data), "--count", "10"]);
    assert_eq!(std::fs::read_dir(data.join("images")).unwrap().count(), 10);
    assert!(data.join("split.json").exists());

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"branches": 2, "columns": 2, "width_mult": 4, "input_size": 16, "epochs": 1, "batch_size": 3}"#).unwrap();
    let text = ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert!(text.contains("best epoch"), "{text}");
    assert!(run.join("best.ckpt").exists() && run.join("config.json").exists());

    let dets = dir.path().join("dets.jsonl");
    let images = data.join("images");
    ok(&[
        "infer", "--ckpt", s(&run.join("best.ckpt")), "--images", s(&images), "--out", s(&dets), "--dump-heatmaps", s(&dumps),
        "--heatmap-format", "raw", "--tau", "0",
    ]);
    assert_eq!(std::fs::read_dir(&dumps).unwrap().count(), 10);
    for line in std::fs::read_to_string(&dets).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["x"].as_u64().unwrap() < 16 && v["y"].as_u64().unwrap() < 16);
    }

    let report: serde_json::Value = serde_json::from_str(&ok(&["eval", "--pred", s(&dets), "--gt", s(&data), "--exclusive"])).unwrap();
    let (p, r) = (report["precision"].as_f64().unwrap(), report["recall"].as_f64().unwrap());
    assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));

    let sweep = ok(&["ablate", "--suite", "lambda", "--data", s(&data), "--ckpt", s(&run.join("best.ckpt"))]);
    assert_eq!(sweep.lines().filter(|l| l.contains("0.")).count(), 11, "{sweep}");
}

#[test]
fn annotate_writes_one_point_per_component() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    std::fs::create_dir(&masks).unwrap();
    // two 8-connected blobs on a 6x5 mask
    let mut px = vec![0u8; 30];
    for i in [0, 1, 6, 7, 22, 28] {
        px[i] = 255;
    }
    let mut pgm = b"P5\n6 5\n255\n".to_vec();
    pgm.extend(&px);
    std::fs::write(masks.join("m1.pgm"), pgm).unwrap();
    let out = dir.path().join("labels");
    ok(&["annotate", "--masks", s(&masks), "--out", s(&out)]);
    let csv = std::fs::read_to_string(out.join("m1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = sshd(&["ablate", "--suite", "depth", "--data", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown ablation suite"));

    let out = sshd(&["gradcheck", "--ops", "conv3d"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"epochs": 1, "learning_rte": 0.1}"#).unwrap();
    let out = sshd(&["train", "--config", s(&cfg), "--data", s(dir.path()), "--out", s(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rte"));
}

#[test]
fn gradcheck_runs_a_named_case() {
    let text = ok(&["gradcheck", "--ops", "relu", "--seeds", "3"]);
    assert!(text.lines().any(|l| l.starts_with("relu") && l.ends_with("ok")), "{text}");
}

#[test]
fn bad_thread_count_is_reported() {
    let out = Command::new(env!("CARGO_BIN_EXE_sshd-net")).args(["gradcheck", "--ops", "relu", "--seeds", "1"]).env("SSHD_THREADS", "zero").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SSHD_THREADS"));
}
