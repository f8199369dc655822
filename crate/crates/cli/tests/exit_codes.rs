use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn shiftgate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftgate"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: serde_json::Value) -> String {
    let path = dir.join("cfg.json");
    std::fs::write(&path, body.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small(out: &str) -> serde_json::Value {
    json!({
        "seed": 3,
        "out": out,
        "data": {
            "source": "synth",
            "classes": 2,
            "image_size": 12,
            "train_per_class": 32,
            "test_per_class": 4,
            "external_per_class": 6
        }
    })
}

#[test]
fn config_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), json!({ "seed": 1, "data": { "source": "synth", "classes": 1 }, "bogus": 0 }));
    for cmd in ["synth", "all", "quantify"] {
        let out = shiftgate(&[cmd, "--config", &bad]);
        assert_eq!(out.status.code(), Some(2), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    }
    let missing = dir.path().join("nope.json");
    assert_eq!(shiftgate(&["synth", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    // argument errors share the config-error code
    assert_eq!(shiftgate(&["synth"]).status.code(), Some(2));
    assert_eq!(shiftgate(&["frobnicate", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn stages_out_of_order_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small("run"));
    let out = shiftgate(&["quantify", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run cluster first"));

    assert_eq!(shiftgate(&["synth", "--config", &cfg]).status.code(), Some(0));
    let run = dir.path().join("run");
    assert!(run.join("data/external.manifest.json").is_file());
    assert!(!run.join(".shiftgate.lock").exists());

    for (cmd, needs) in [("score", "train"), ("cluster", "score"), ("otdd", "cluster"), ("report", "otdd")] {
        let out = shiftgate(&[cmd, "--config", &cfg]);
        assert_eq!(out.status.code(), Some(3), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(&format!("run {needs} first")), "{cmd}");
    }
}

#[test]
fn overrides_and_lock() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), small("ignored"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let status = shiftgate(&["synth", "--config", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]).status;
        assert_eq!(status.code(), Some(0));
    }
    assert!(!dir.path().join("ignored").exists());
    let hash = |d: &Path| std::fs::read(d.join("data/external.manifest.json")).unwrap();
    assert_ne!(hash(&a), hash(&b));

    std::fs::write(a.join(".shiftgate.lock"), "").unwrap();
    let out = shiftgate(&["synth", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("another run"));
}
