use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_derain"));
    c.env_remove("DERAIN_RUN_DIR").env("RUST_LOG", "warn");
    c
}

/// Small model and schedule so every subcommand runs in well under a second.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "checkpoint": dir.join("out/train-toy/model.vdt"),
        "model": {
            "num_blocks": 3, "dim": 8, "heads": 2, "ffn_dim": 16, "text_len": 4,
            "vocab_size": 6, "patch_size": 4, "frames": 2, "channels": 3,
            "height": 16, "width": 16
        },
        "schedule": { "train_steps": 100, "steps": 10 },
        "t_skip": 4,
        "data": { "train_videos": 6, "eval_videos": 2 },
        "train": { "steps": 40, "batch_size": 2, "warmup_steps": 1, "learning_rate": 0.01 },
        "analysis": {
            "block_seeds": [0], "block_prompts": ["scene rain"], "sweep_videos": 1,
            "sweep_t_skips": [0, 3], "probe_seeds": [0, 1], "probe_prompts": ["", "rain"]
        },
        "output": dir.join("out"),
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> std::process::Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn setup() -> (tempfile::TempDir, String) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path()).display().to_string();
    run(&["--config", &cfg, "train-toy"]);
    (tmp, cfg)
}

#[test]
fn train_then_every_subcommand_completes() {
    let (tmp, cfg) = setup();
    let out = tmp.path().join("out");
    for sub in [
        "gen-data",
        "analyze-blocks",
        "sweep-inversion",
        "probe-prompts",
        "derain",
    ] {
        run(&["--config", &cfg, sub]);
        let m = manifest(&out.join(sub));
        assert_eq!(m["status"], "complete", "{sub}");
        assert_eq!(m["subcommand"], sub);
        assert!(!m["outputs"].as_array().unwrap().is_empty());
    }
    for f in [
        "analyze-blocks/blocks.csv",
        "analyze-blocks/blocks.svg",
        "sweep-inversion/sweep.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("analyze-blocks/blocks.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let ppm = std::fs::read(out.join("derain/video_00/frames/derained_f0.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));

    let scene = out
        .join("gen-data/eval/scene_0000.vdt")
        .display()
        .to_string();
    run(&["--config", &cfg, "--input", &scene, "derain"]);
    let derained = out.join("derain/single/derained.vdt").display().to_string();
    run(&[
        "--config",
        &cfg,
        "--input",
        &scene,
        "--derained",
        &derained,
        "evaluate",
    ]);
    let e: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluate/evaluate.json")).unwrap())
            .unwrap();
    for k in ["rain_residual_ratio", "psnr_gain_db", "warp_error_output"] {
        assert!(e["verdict"][k].is_number(), "{k}");
    }
    assert_eq!(e["verdict"]["rain_residual_ratio_max"], 0.5);
}

#[test]
fn zero_lambda_derain_equals_pure_reconstruction() {
    let (tmp, cfg) = setup();
    let out = tmp.path().join("out");
    run(&["--config", &cfg, "gen-data"]);
    let scene = out
        .join("gen-data/eval/scene_0001.vdt")
        .display()
        .to_string();
    run(&["--config", &cfg, "--input", &scene, "invert"]);
    run(&[
        "--config", &cfg, "--input", &scene, "--lambda", "0", "derain",
    ]);
    let a = std::fs::read(out.join("invert/reconstruction.vdt")).unwrap();
    let b = std::fs::read(out.join("derain/single/derained.vdt")).unwrap();
    assert_eq!(a, b);
    run(&[
        "--config",
        &cfg,
        "--input",
        &scene,
        "--lambda",
        "15",
        "--no-attn-switch",
        "derain",
    ]);
    let c = std::fs::read(out.join("derain/single/derained.vdt")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn replayed_manifest_gives_identical_outputs() {
    let (tmp, cfg) = setup();
    let out = tmp.path().join("out");
    run(&[
        "--config",
        &cfg,
        "--prompt-mode",
        "mean",
        "--blocks",
        "0,2",
        "derain",
    ]);
    let first = manifest(&out.join("derain"));
    assert_eq!(first["config"]["blocks"], json!([0, 2]));
    let again = tmp.path().join("again");
    let m = out.join("derain/manifest.json").display().to_string();
    run(&["replay", &m, "--out", again.to_str().unwrap()]);
    let second = manifest(&again.join("derain"));
    assert_eq!(first["outputs"], second["outputs"]);

    let train = out.join("train-toy/manifest.json").display().to_string();
    run(&["replay", &train, "--out", again.to_str().unwrap()]);
    assert_eq!(
        std::fs::read(out.join("train-toy/model.vdt")).unwrap(),
        std::fs::read(again.join("train-toy/model.vdt")).unwrap()
    );
}

#[test]
fn invalid_config_is_rejected_before_any_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path()).display().to_string();
    for bad in [
        vec!["--t-skip", "11", "derain"],
        vec!["--blocks", "7", "derain"],
        vec!["--blocks", "1", "--blocks-initial", "0", "derain"],
        vec!["--lambda=-2", "derain"],
    ] {
        let mut args = vec!["--config", cfg.as_str()];
        args.extend(bad.iter().copied());
        let o = bin().args(&args).output().unwrap();
        assert!(!o.status.success(), "{bad:?}");
        assert!(
            String::from_utf8_lossy(&o.stderr).contains("invalid"),
            "{bad:?}"
        );
    }
    assert!(!tmp.path().join("out").exists());
    let o = bin()
        .args(["--prompt-mode", "loud", "derain"])
        .output()
        .unwrap();
    assert!(!o.status.success());
}

#[test]
fn run_dir_env_overrides_config_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path()).display().to_string();
    let env_root = tmp.path().join("env_root");
    let o = bin()
        .env("DERAIN_RUN_DIR", &env_root)
        .args(["--config", &cfg, "gen-data"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&env_root.join("gen-data"))["status"], "complete");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_checkpoint_leaves_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path()).display().to_string();
    let o = bin()
        .args(["--config", &cfg, "probe-prompts"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert_eq!(
        manifest(&tmp.path().join("out/probe-prompts"))["status"],
        "incomplete"
    );
}
