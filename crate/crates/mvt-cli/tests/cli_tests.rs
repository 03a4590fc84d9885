//! End-to-end tests of the `mvt` binary: artifact layout, option
//! resolution, determinism, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn mvt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvt"))
}

fn run(args: &[&str]) -> Output {
    mvt().args(args).output().expect("spawn mvt")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "wrong exit code; stderr:\n{}",
        stderr(out)
    );
}

/// 2-view 8x8 dataset matching `model_flags`; small enough that every
/// test stays fast.
fn gen_dataset(dir: &Path, seed: u64) {
    let out = run(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--views",
        "2",
        "--img-h",
        "8",
        "--img-w",
        "8",
        "--train",
        "12",
        "--val",
        "6",
        "--test",
        "6",
    ]);
    assert_exit(&out, 0);
}

fn model_flags() -> Vec<&'static str> {
    vec![
        "--views",
        "2",
        "--img-h",
        "8",
        "--img-w",
        "8",
        "--patch",
        "4",
        "--dim",
        "8",
        "--heads",
        "2",
        "--local-blocks",
        "1",
        "--global-blocks",
        "1",
    ]
}

fn train_into(data: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![
        "train".into(),
        "--data".into(),
        data.display().to_string(),
        "--out".into(),
        out_dir.display().to_string(),
        "--batch-size".into(),
        "5".into(),
        "--seed".into(),
        "3".into(),
    ];
    args.extend(model_flags().into_iter().map(String::from));
    args.extend(extra.iter().map(|s| s.to_string()));
    mvt().args(&args).output().expect("spawn mvt train")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

// ── help and usage ──

#[test]
fn help_exits_zero_for_every_command() {
    for args in [
        vec!["--help"],
        vec!["gen-data", "--help"],
        vec!["train", "--help"],
        vec!["eval", "--help"],
        vec!["sweep", "--help"],
        vec!["bench", "--help"],
    ] {
        let out = run(&args);
        assert_exit(&out, 0);
    }
    assert!(stdout(&run(&["--help"])).contains("gen-data"));
}

#[test]
fn bad_flags_exit_two() {
    assert_exit(&run(&["train", "--no-such-flag"]), 2);
    assert_exit(&run(&["bench", "--preset", "huge"]), 2);
    assert_exit(&run(&["gen-data"]), 2); // missing --out
    let tmp = tempfile::tempdir().unwrap();
    let bad = run(&[
        "gen-data",
        "--out",
        tmp.path().to_str().unwrap(),
        "--val",
        "0",
    ]);
    assert_exit(&bad, 2);
}

// ── gen-data ──

#[test]
fn gen_data_is_deterministic_across_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_dataset(&a, 11);
    gen_dataset(&b, 11);
    assert_eq!(read(&a.join("manifest.json")), read(&b.join("manifest.json")));
    for split in ["train", "val", "test"] {
        let fa = std::fs::read(a.join(format!("{split}.mvtd"))).unwrap();
        let fb = std::fs::read(b.join(format!("{split}.mvtd"))).unwrap();
        assert_eq!(fa, fb, "split {split} differs between identical runs");
    }
}

// ── train and eval ──

#[test]
fn train_writes_artifacts_and_eval_matches_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("run");
    gen_dataset(&data, 11);
    let out = train_into(&data, &out_dir, &["--epochs", "1"]);
    assert_exit(&out, 0);

    let resolved = read(&out_dir.join("config.resolved"));
    assert!(resolved.contains("command=train"));
    assert!(resolved.contains("model.dim=8"));
    assert!(resolved.contains("train.epochs=1"));
    assert!(resolved.contains("precision=f64"));

    let csv = read(&out_dir.join("metrics.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "header plus one epoch row:\n{csv}");
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_acc,seconds,flops_fwd");
    let last_val_acc = lines[1].split(',').nth(3).unwrap().to_string();

    // With one epoch the best checkpoint is the last epoch, so eval on
    // the written checkpoint must reproduce the CSV's val_acc exactly.
    let eval = run(&[
        "eval",
        "--ckpt",
        out_dir.join("best.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "val",
    ]);
    assert_exit(&eval, 0);
    let eval_out = stdout(&eval);
    let acc_line = eval_out.lines().next().unwrap();
    assert!(
        acc_line.starts_with(&format!("accuracy={last_val_acc} ")),
        "eval {acc_line:?} vs csv val_acc {last_val_acc:?}"
    );
    assert!(eval_out.contains("confusion.5="));
}

#[test]
fn train_reruns_are_byte_identical_with_timing_off() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, 11);
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    for dir in [&run_a, &run_b] {
        let out = train_into(&data, dir, &["--epochs", "2", "--timing", "off"]);
        assert_exit(&out, 0);
    }
    assert_eq!(
        std::fs::read(run_a.join("metrics.csv")).unwrap(),
        std::fs::read(run_b.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(run_a.join("best.ckpt")).unwrap(),
        std::fs::read(run_b.join("best.ckpt")).unwrap()
    );
}

#[test]
fn train_rejects_mismatched_dataset_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, 11); // 2 views, 8x8
    let out = mvt()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            tmp.path().join("run").to_str().unwrap(),
            "--preset",
            "micro-tiny", // wants 6 views of 32x32
            "--epochs",
            "1",
        ])
        .output()
        .unwrap();
    assert_exit(&out, 2);
}

#[test]
fn diverged_training_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_dataset(&data, 11);
    let out = train_into(
        &data,
        &tmp.path().join("run"),
        &["--epochs", "1", "--lr", "1e300"],
    );
    assert_exit(&out, 4);
}

#[test]
fn eval_rejects_unknown_split_and_missing_data_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("run");
    gen_dataset(&data, 11);
    let out = train_into(&data, &out_dir, &["--epochs", "1"]);
    assert_exit(&out, 0);
    let ckpt = out_dir.join("best.ckpt");
    let bad_split = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "holdout",
    ]);
    assert_exit(&bad_split, 2);
    let missing = run(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
    ]);
    assert_exit(&missing, 3);
}

#[test]
fn eval_autodetects_f32_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("run");
    gen_dataset(&data, 11);
    let out = train_into(&data, &out_dir, &["--epochs", "1", "--precision", "f32"]);
    assert_exit(&out, 0);
    let eval = run(&[
        "eval",
        "--ckpt",
        out_dir.join("best.ckpt").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_exit(&eval, 0);
    assert!(stdout(&eval).starts_with("accuracy="));
}

// ── config files ──

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("run");
    gen_dataset(&data, 11);
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# training recipe\n\
             data = {}\n\
             out = {}\n\
             [model]\n\
             views = 2\n\
             img_h = 8\n\
             img-w = 8\n\
             patch = 4\n\
             dim = 8\n\
             heads = 2\n\
             local-blocks = 1\n\
             global-blocks = 1\n\
             [train]\n\
             epochs = 3\n\
             lr = 0.005\n\
             batch-size = 5\n\
             seed = 3\n",
            data.display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "1"]);
    assert_exit(&out, 0);
    let resolved = read(&out_dir.join("config.resolved"));
    assert!(resolved.contains("train.epochs=1"), "flag wins: {resolved}");
    assert!(resolved.contains("train.lr=0.005"), "file fills in: {resolved}");
    assert_eq!(read(&out_dir.join("metrics.csv")).lines().count(), 2);
}

#[test]
fn json_config_is_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("run");
    gen_dataset(&data, 11);
    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "data": data.display().to_string(),
            "out": out_dir.display().to_string(),
            "model": {
                "views": 2, "img-h": 8, "img-w": 8, "patch": 4,
                "dim": 8, "heads": 2, "local-blocks": 1, "global-blocks": 1
            },
            "train": { "epochs": 1, "batch-size": 5, "seed": 3 }
        })
        .to_string(),
    )
    .unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    assert!(out_dir.join("best.ckpt").exists());
}

#[test]
fn duplicate_config_keys_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("dup.cfg");
    std::fs::write(&cfg, "[model]\nlr = 1\n[train]\nlr = 2\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 2);
}

// ── sweep ──

fn sweep_args(data: &Path, out_dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "sweep".into(),
        "--data".into(),
        data.display().to_string(),
        "--out".into(),
        out_dir.display().to_string(),
        "--seeds".into(),
        "1".into(),
        "--epochs".into(),
        "1".into(),
        "--batch-size".into(),
        "5".into(),
    ];
    args.extend(model_flags().into_iter().map(String::from));
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn block_split_sweep_writes_rows_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("sweep");
    gen_dataset(&data, 11);
    let args = sweep_args(&data, &out_dir, &["--axis", "block-split", "--total", "2"]);
    let out = mvt().args(&args).output().unwrap();
    assert_exit(&out, 0);

    let sweep_csv = read(&out_dir.join("sweep.csv"));
    let rows: Vec<&str> = sweep_csv.lines().collect();
    assert_eq!(rows.len(), 3, "header + (2,0) + (0,2):\n{sweep_csv}");
    assert!(rows[1].starts_with("block-split,s2t0,1,2,0,"));
    assert!(rows[2].starts_with("block-split,s0t2,1,0,2,"));

    let summary = read(&out_dir.join("summary.csv"));
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(summary.lines().filter(|l| l.ends_with(",1")).count(), 1);
    assert!(stdout(&out).contains("mean_val_acc"), "summary echoed to stdout");

    // A finished sweep is refused without --resume and untouched with it.
    let again = mvt().args(&args).output().unwrap();
    assert_exit(&again, 2);
    let mut resumed_args = args.clone();
    resumed_args.push("--resume".into());
    let resumed = mvt().args(&resumed_args).output().unwrap();
    assert_exit(&resumed, 0);
    assert_eq!(read(&out_dir.join("sweep.csv")), sweep_csv);
}

#[test]
fn pooling_sweep_has_one_row_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out_dir = tmp.path().join("sweep");
    gen_dataset(&data, 11);
    let args = sweep_args(&data, &out_dir, &["--axis", "pooling"]);
    let out = mvt().args(&args).output().unwrap();
    assert_exit(&out, 0);
    let rows: Vec<String> = read(&out_dir.join("sweep.csv"))
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains(",class_token,"));
    assert!(rows[1].contains(",avg_pool,"));
}

// ── bench and environment ──

#[test]
fn bench_reports_frozen_micro_counts() {
    let out = run(&["bench", "--preset", "micro", "--samples", "1"]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("params=1851"), "{text}");
    assert!(text.contains("flops_fwd=36080"), "{text}");
    assert!(text.contains("peak_tape_bytes="), "{text}");
}

#[test]
fn thread_env_is_accepted_but_capped() {
    let out = mvt()
        .args(["bench", "--preset", "micro", "--samples", "1"])
        .env("MVT_THREADS", "4")
        .output()
        .unwrap();
    assert_exit(&out, 0);
    assert!(stderr(&out).contains("requested=4 effective=1"));
    let bad = mvt()
        .args(["bench", "--preset", "micro", "--samples", "1"])
        .env("MVT_THREADS", "zero")
        .output()
        .unwrap();
    assert_exit(&bad, 2);
}
