//! End-to-end checks of the dcg binary: exit codes, artifact determinism,
//! the learning-rate column of the loss curve, and the gradcheck command.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dcg")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dcg_cli_test_{tag}_{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["eval", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--bogus-flag") || stderr.contains("usage"));
}

#[test]
fn unknown_command_exits_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = scratch("nockpt");
    let data = dir.join("d");
    assert!(run(&["synth-data", "--count", "4", "--out", &path_str(&data)])
        .status
        .success());
    let out = run(&[
        "generate",
        "--ckpt",
        &path_str(&dir.join("missing.ckpt")),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&dir.join("g")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    // Also when --ckpt is omitted entirely.
    let out = run(&[
        "eval",
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&dir.join("e")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gradcheck_passes_with_exit_0() {
    let dir = scratch("gradcheck");
    let out = run(&[
        "gradcheck",
        "--scale",
        "toy",
        "--seed",
        "0",
        "--out",
        &path_str(&dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"));
    assert!(stdout.contains("max_rel_err"));
    assert!(dir.join("gradcheck.txt").is_file());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn synth_train_writes_schedule_exact_loss_curve() {
    let dir = scratch("train");
    let data = dir.join("d");
    assert!(run(&[
        "synth-data",
        "--count",
        "8",
        "--seed",
        "0",
        "--out",
        &path_str(&data)
    ])
    .status
    .success());
    let out_dir = dir.join("run");
    let out = run(&[
        "train",
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&out_dir),
        "--scale",
        "toy",
        "--epochs",
        "3",
        "--batch",
        "4",
        "--seed",
        "0",
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("checkpoint.ckpt").is_file());
    assert!(out_dir.join("config.resolved.txt").is_file());
    let curve = std::fs::read_to_string(out_dir.join("loss_curve.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("step,epoch,lr,nll"));
    let mut prev_lr = f64::INFINITY;
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4);
        let epoch: i32 = cols[1].parse().unwrap();
        let lr: f64 = cols[2].parse().unwrap();
        assert!((lr - 1e-3 * 0.95f64.powi(epoch)).abs() < 1e-12);
        assert!(lr <= prev_lr, "lr column must be non-increasing");
        prev_lr = lr;
        rows += 1;
    }
    assert_eq!(rows, 6, "3 epochs x 2 batches of 4 over 8 sketches");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn heal_twice_gives_byte_identical_masked_pngs() {
    let dir = scratch("heal");
    let data = dir.join("d");
    assert!(run(&["synth-data", "--count", "4", "--seed", "1", "--out", &path_str(&data)])
        .status
        .success());
    let run_dir = dir.join("train");
    assert!(run(&[
        "train",
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&run_dir),
        "--scale",
        "toy",
        "--epochs",
        "1",
        "--batch",
        "4",
        "--threads",
        "1",
    ])
    .status
    .success());
    let ckpt = path_str(&run_dir.join("checkpoint.ckpt"));
    let heal = |tag: &str| -> Vec<u8> {
        let out_dir = dir.join(tag);
        assert!(run(&[
            "heal",
            "--ckpt",
            &ckpt,
            "--data",
            &path_str(&data),
            "--mask",
            "0.3",
            "--seed",
            "7",
            "--out",
            &path_str(&out_dir),
            "--count",
            "2",
        ])
        .status
        .success());
        std::fs::read(out_dir.join("masked_000.png")).unwrap()
    };
    assert_eq!(heal("h1"), heal("h2"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_eval_twice_is_byte_identical() {
    let dir = scratch("determinism");
    let data = dir.join("d");
    assert!(run(&["synth-data", "--count", "8", "--seed", "2", "--out", &path_str(&data)])
        .status
        .success());
    let one_run = |tag: &str| -> (Vec<u8>, Vec<u8>) {
        let out_dir = dir.join(tag);
        assert!(run(&[
            "train",
            "--data",
            &path_str(&data),
            "--out",
            &path_str(&out_dir),
            "--scale",
            "toy",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--seed",
            "3",
            "--threads",
            "1",
        ])
        .status
        .success());
        let ckpt = out_dir.join("checkpoint.ckpt");
        assert!(run(&[
            "eval",
            "--ckpt",
            &path_str(&ckpt),
            "--data",
            &path_str(&data),
            "--mask",
            "0.1",
            "--seed",
            "0",
            "--out",
            &path_str(&out_dir),
            "--threads",
            "1",
        ])
        .status
        .success());
        (
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(out_dir.join("metrics.json")).unwrap(),
        )
    };
    let (ckpt_a, metrics_a) = one_run("a");
    let (ckpt_b, metrics_b) = one_run("b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints must be byte-identical");
    assert_eq!(metrics_a, metrics_b, "metrics JSON must be byte-identical");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn generate_round_trips_through_ndjson_and_dumps_graphs() {
    let dir = scratch("generate");
    let data = dir.join("d");
    assert!(run(&["synth-data", "--count", "4", "--seed", "4", "--out", &path_str(&data)])
        .status
        .success());
    let run_dir = dir.join("train");
    assert!(run(&[
        "train",
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&run_dir),
        "--scale",
        "toy",
        "--epochs",
        "1",
        "--batch",
        "4",
        "--threads",
        "1",
    ])
    .status
    .success());
    let gen_dir = dir.join("gen");
    assert!(run(&[
        "generate",
        "--ckpt",
        &path_str(&run_dir.join("checkpoint.ckpt")),
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&gen_dir),
        "--count",
        "2",
        "--dump-graph",
    ])
    .status
    .success());
    assert!(gen_dir.join("gen_000.png").is_file());
    assert!(gen_dir.join("graph_000_ahat.csv").is_file());
    // The generated NDJSON round-trips through ingest.
    let ingest_dir = dir.join("ingest");
    let out = run(&[
        "ingest",
        "--data",
        &path_str(&gen_dir.join("generated.ndjson")),
        "--out",
        &path_str(&ingest_dir),
    ]);
    assert!(out.status.success());
    assert!(ingest_dir.join("dataset.dcs1").is_file());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn interpolate_accepts_comma_separated_ids() {
    let dir = scratch("interp");
    let data = dir.join("d");
    assert!(run(&["synth-data", "--count", "4", "--seed", "5", "--out", &path_str(&data)])
        .status
        .success());
    let run_dir = dir.join("train");
    assert!(run(&[
        "train",
        "--data",
        &path_str(&data),
        "--out",
        &path_str(&run_dir),
        "--scale",
        "toy",
        "--epochs",
        "1",
        "--batch",
        "4",
        "--threads",
        "1",
    ])
    .status
    .success());
    let out_dir = dir.join("frames");
    let out = run(&[
        "interpolate",
        "--ckpt",
        &path_str(&run_dir.join("checkpoint.ckpt")),
        "--data",
        &path_str(&data),
        "--ids",
        "0,3",
        "--steps",
        "4",
        "--out",
        &path_str(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..4 {
        assert!(out_dir.join(format!("interp_{i:02}.png")).is_file());
    }
    // A single index is rejected.
    let out = run(&[
        "interpolate",
        "--ckpt",
        &path_str(&run_dir.join("checkpoint.ckpt")),
        "--data",
        &path_str(&data),
        "--ids",
        "2",
        "--out",
        &path_str(&dir.join("bad")),
    ]);
    assert!(!out.status.success());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = scratch("config");
    let cfg_path = dir.join("run.cfg");
    std::fs::write(&cfg_path, "seed=9\ncount=6\n").unwrap();
    let out_dir = dir.join("out");
    assert!(run(&[
        "synth-data",
        "--config",
        &path_str(&cfg_path),
        "--count",
        "4",
        "--out",
        &path_str(&out_dir),
    ])
    .status
    .success());
    let resolved = std::fs::read_to_string(out_dir.join("config.resolved.txt")).unwrap();
    assert!(resolved.contains("seed=9"), "file value kept");
    assert!(resolved.contains("count=4"), "flag overrides file");
    let body = std::fs::read_to_string(out_dir.join("synthetic.ndjson")).unwrap();
    assert_eq!(body.lines().count(), 4);
    std::fs::remove_dir_all(&dir).ok();
}
