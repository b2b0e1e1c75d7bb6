//! End-to-end checks of the command-line interface: exit codes, error
//! categories, and byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn metro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metro"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn rf_plan_emits_csv_with_status_zero() {
    let out = metro(&[
        "rf-plan",
        "--input",
        "256",
        "--strides",
        "2,2,2,2,2",
        "--variant",
        "centered",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("output_index,center_px"));
    // 256 px through five stride-2 layers -> 8 centers, symmetric about 128.
    let centers: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(centers.len(), 8);
    assert_eq!(centers[0] + centers[7], 256.0);
}

#[test]
fn eval_with_missing_checkpoint_reports_io_category() {
    let tmp = tempfile::tempdir().unwrap();
    let out = metro(&[
        "eval",
        "--checkpoint",
        tmp.path().join("missing").to_str().unwrap(),
        "--data",
        tmp.path().join("nodata").to_str().unwrap(),
        "--out",
        tmp.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("io: "), "stderr was: {stderr}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = metro(&["rf-plan", "--input", "64", "--strides", "2", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_gen_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let out = metro(&[
            "synth-gen",
            "--out",
            dir.to_str().unwrap(),
            "--n",
            "5",
            "--seed",
            "7",
            "--out-size",
            "32",
        ]);
        assert!(out.status.success());
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.len() > 10);
    for name in names {
        // Timestamps are confined to the manifest.
        if name == "run_manifest.json" {
            continue;
        }
        let fa = std::fs::read(a.join(&name)).unwrap();
        let fb = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(fa, fb, "file {name} differs between reruns");
    }
}

#[test]
fn metro_seed_env_is_used_as_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let by_flag = tmp.path().join("flag");
    let by_env = tmp.path().join("env");
    let out = metro(&[
        "synth-gen",
        "--out",
        by_flag.to_str().unwrap(),
        "--n",
        "2",
        "--seed",
        "123",
        "--out-size",
        "16",
    ]);
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_metro"))
        .env("METRO_SEED", "123")
        .args([
            "synth-gen",
            "--out",
            by_env.to_str().unwrap(),
            "--n",
            "2",
            "--out-size",
            "16",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let img = |d: &Path| std::fs::read(d.join("img_00000.mtrt")).unwrap();
    assert_eq!(img(&by_flag), img(&by_env));
}

#[test]
fn config_file_merges_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"n": 3, "seed": 11, "dataset": {"out_size": 16}}"#).unwrap();
    let from_cfg = tmp.path().join("cfg_out");
    let out = metro(&[
        "synth-gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        from_cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(from_cfg.join("img_00002.mtrt").exists());
    assert!(!from_cfg.join("img_00003.mtrt").exists());
    // A flag wins over the config file.
    let overridden = tmp.path().join("ovr_out");
    let out = metro(&[
        "synth-gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        overridden.to_str().unwrap(),
        "--n",
        "1",
    ]);
    assert!(out.status.success());
    assert!(overridden.join("img_00000.mtrt").exists());
    assert!(!overridden.join("img_00001.mtrt").exists());
    // Same seed and dataset config -> identical example bytes.
    let a = std::fs::read(from_cfg.join("img_00000.mtrt")).unwrap();
    let b = std::fs::read(overridden.join("img_00000.mtrt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decode_writes_pose_json_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let logits = tmp.path().join("logits.mtrt");
    let tensor = ndarray::ArrayD::<f32>::zeros(ndarray::IxDyn(&[17, 8, 8, 8]));
    metro::io::save_mtrt(&logits, &tensor).unwrap();
    let out_dir = tmp.path().join("dec");
    let out = metro(&[
        "decode",
        "--logits",
        logits.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let pose: serde_json::Value =
        metro::io::load_json(out_dir.join("pose.json")).unwrap();
    // Uniform heatmap decodes to the volume barycenter on every axis.
    let j0 = &pose["volume"]["joints_mm"][0];
    for k in 0..3 {
        assert!((j0[k].as_f64().unwrap() - 962.5).abs() < 1e-9);
    }
    assert!(out_dir.join("run_manifest.json").exists());
}
