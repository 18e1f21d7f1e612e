use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtdepth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--train-samples",
    "16",
    "--val-samples",
    "4",
    "--batch-size",
    "4",
    "--validation-interval",
    "5",
    "--prefetch",
    "0",
];

#[test]
fn help_exits_zero_and_lists_defaults() {
    let out = mtdepth(&["--help"]);
    assert_eq!(code(&out), 0);
    for cmd in ["gen-data", "lr-find", "train", "ablate", "eval", "predict"] {
        let out = mtdepth(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
    }
    let help = String::from_utf8(mtdepth(&["train", "--help"]).stdout).unwrap();
    for needle in [
        "[config default: 2000]",
        "[config default: 16]",
        "[config default: 32]",
        "[config default: 100]",
    ] {
        assert!(help.contains(needle), "{needle}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    assert_eq!(code(&mtdepth(&["frobnicate"])), 1);
    assert_eq!(code(&mtdepth(&["train"])), 1);
    let out = mtdepth(&[
        "train",
        "--out",
        s(&out_dir),
        "--weighting",
        "equal",
        "--manual-weights",
        "5,1",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("conflicts"));
    assert!(out.stdout.is_empty());
    assert!(!out_dir.exists());
    assert_eq!(code(&mtdepth(&["ablate", "--out", s(&out_dir), "--axis", "colour"])), 1);
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"iterations": 3, "learning_rate": 1}"#).unwrap();
    let out = mtdepth(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn occupied_output_needs_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let args = [
        "gen-data",
        "--out",
        s(&out),
        "--train-samples",
        "2",
        "--val-samples",
        "1",
    ];
    assert_eq!(code(&mtdepth(&args)), 0);
    assert_eq!(code(&mtdepth(&args)), 1);
    let mut again = args.to_vec();
    again.push("--overwrite");
    assert_eq!(code(&mtdepth(&again)), 0);
}

#[test]
fn gen_data_then_eval_of_ground_truth_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = mtdepth(&[
        "gen-data",
        "--out",
        s(&data),
        "--train-samples",
        "2",
        "--val-samples",
        "3",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("resolved_config.json").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sample_count"], 5);

    let gt = data.join("val/depth");
    let eval_dir = dir.path().join("eval");
    let out = mtdepth(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&eval_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["mean_silog_scaled"].as_f64(), Some(0.0));
    assert_eq!(report["scored"], 3);
}

#[test]
fn eval_without_matching_ground_truth_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        code(&mtdepth(&[
            "gen-data",
            "--out",
            s(&data),
            "--train-samples",
            "2",
            "--val-samples",
            "1"
        ])),
        0
    );
    let out = mtdepth(&[
        "eval",
        "--pred",
        s(&data.join("train/depth")),
        "--gt",
        s(&data.join("val/depth")),
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn training_twice_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let mut args = vec![
            "train",
            "--out",
            s(&out_dir),
            "--iterations",
            "10",
            "--lr",
            "1e-3",
            "--seed",
            "7",
        ];
        args.extend_from_slice(SMALL);
        let out = mtdepth(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
        (
            fs::read(out_dir.join("train_log.csv")).unwrap(),
            fs::read(out_dir.join("val_log.csv")).unwrap(),
        )
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    let snapshot = fs::read_to_string(dir.path().join("a/resolved_config.json")).unwrap();
    assert!(snapshot.contains("\"seed\": 7"));
}

#[test]
fn resume_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let mut args = vec![
        "train",
        "--out",
        s(&first),
        "--iterations",
        "6",
        "--lr",
        "1e-3",
        "--n-cls",
        "8",
    ];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&mtdepth(&args)), 0);

    let conflict = mtdepth(&[
        "train",
        "--out",
        s(&dir.path().join("bad")),
        "--resume",
        s(&first.join("model.ckpt")),
        "--n-cls",
        "4",
    ]);
    assert_eq!(code(&conflict), 1);
    assert!(String::from_utf8_lossy(&conflict.stderr).contains("n_cls"));

    let resumed = dir.path().join("resumed");
    let out = mtdepth(&["train", "--out", s(&resumed), "--resume", s(&first.join("model.ckpt"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(first.join("train_log.csv")).unwrap(),
        fs::read(resumed.join("train_log.csv")).unwrap()
    );

    let data = dir.path().join("data");
    assert_eq!(
        code(&mtdepth(&[
            "gen-data",
            "--out",
            s(&data),
            "--train-samples",
            "1",
            "--val-samples",
            "1"
        ])),
        0
    );
    let pred = dir.path().join("pred");
    let out = mtdepth(&[
        "predict",
        "--checkpoint",
        s(&first.join("model.ckpt")),
        "--image",
        s(&data.join("val/image/00000.png")),
        "--out",
        s(&pred),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let depth = mtdepth::data::read_kitti_png(&pred.join("00000.png")).unwrap();
    assert_eq!((depth.height, depth.width), (64, 64));
    assert_eq!(depth.valid_count(), 64 * 64);
}

#[test]
fn lr_find_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let mut args = vec!["lr-find", "--out", s(&out_dir), "--steps", "40"];
    args.extend_from_slice(SMALL);
    let out = mtdepth(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("lr_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["selected_alpha"].as_f64().unwrap() > 0.0);
    assert!(summary["intervals"].is_array());
    assert_eq!(
        code(&mtdepth(&[
            "lr-find",
            "--out",
            s(&dir.path().join("x")),
            "--lr",
            "1e-3"
        ])),
        1
    );
}
