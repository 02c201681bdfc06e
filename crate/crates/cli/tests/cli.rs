//! End-to-end checks of the command-line surface: exit codes, file outputs,
//! overrides, and the self-test identities.

use std::path::Path;
use std::process::{Command, Output};

use lensless::io;
use lensless::optics::Frame;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lensless"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("spawn lensless")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small fast setup shared by most tests.
const SMALL: &[&str] = &["--grid", "6x6", "--sensor", "32x24", "--noiseless", "--n-avg", "1"];

fn calibrate_small(dir: &Path, out: &str) {
    let mut args = vec!["calibrate"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out-dir", ".", "--out", out]);
    let res = run(&args, dir);
    assert_code(&res, 0);
}

#[test]
fn calibrate_writes_the_expected_lcal1_size_and_note() {
    let dir = tempfile::tempdir().unwrap();
    calibrate_small(dir.path(), "a.lcal");
    let bytes = std::fs::read(dir.path().join("a.lcal")).unwrap();
    // header: magic 5 + version 1 + 6 u32 + 3 f64 + 2 u32, then the payload
    let n_pixels = 32 * 24;
    let n_sources = 36;
    assert_eq!(bytes.len(), 62 + n_pixels * n_sources * 8);
}

#[test]
fn desk_scale_lcal1_is_14_mb() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["calibrate", "--noiseless", "--n-avg", "1", "--out-dir", ".", "--out", "desk.lcal"], dir.path());
    assert_code(&res, 0);
    let bytes = std::fs::read(dir.path().join("desk.lcal")).unwrap();
    assert_eq!(bytes.len(), 62 + 6912 * 256 * 8);
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("ill-posed"), "{text}");
}

#[test]
fn self_test_reconstruct_recovers_a_small_pattern() {
    let dir = tempfile::tempdir().unwrap();
    calibrate_small(dir.path(), "a.lcal");
    let mut args = vec!["reconstruct", "--calibration", "a.lcal", "--pattern", "single(2,3)"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out-dir", "out"]);
    let res = run(&args, dir.path());
    assert_code(&res, 0);
    for f in ["scene_raw.pgm", "scene_bin.pgm", "measurement.pgm", "report.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["quality"]["pixel_accuracy"], 1.0);
}

#[test]
fn zero_measurement_exercises_the_defined_as_zero_residual_path() {
    let dir = tempfile::tempdir().unwrap();
    calibrate_small(dir.path(), "a.lcal");
    io::save_lfr1(&dir.path().join("zero.lfr"), &Frame::zeros(32, 24)).unwrap();
    let mut args = vec!["reconstruct", "--calibration", "a.lcal", "--measurement", "zero.lfr"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--out-dir", "out"]);
    let res = run(&args, dir.path());
    assert_code(&res, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["residual_rel"], 0.0);
    // raw scene is identically zero, displayed as an all-dark image
    let raw = io::load_pgm(&dir.path().join("out/scene_raw.pgm")).unwrap();
    assert!(raw.data.iter().all(|v| *v == 0.0));
}

#[test]
fn mismatched_measurement_dims_exit_2_naming_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    calibrate_small(dir.path(), "a.lcal");
    io::save_lfr1(&dir.path().join("wrong.lfr"), &Frame::zeros(16, 12)).unwrap();
    let res = run(
        &["reconstruct", "--calibration", "a.lcal", "--measurement", "wrong.lfr"],
        dir.path(),
    );
    assert_code(&res, 2);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("16x12") && err.contains("32x24"), "{err}");
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    calibrate_small(dir.path(), "a.lcal");

    let res = run(&["reconstruct", "--calibration", "a.lcal", "--pattern", "letter-Q"], dir.path());
    assert_code(&res, 1);

    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"optics": {}, "seed": 1, "frobnicate": true}"#,
    )
    .unwrap();
    let res = run(&["calibrate", "--config", "bad.json"], dir.path());
    assert_code(&res, 1);

    let res = run(&["frobnicate"], dir.path());
    assert_code(&res, 1);
}

#[test]
fn video_single_frame_matches_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let small: &[&str] = &["--grid", "12x12", "--sensor", "32x24", "--noiseless", "--n-avg", "1", "--seed", "5"];
    let mut args = vec!["calibrate"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", ".", "--out", "a.lcal"]);
    assert_code(&run(&args, dir.path()), 0);

    let mut args = vec!["reconstruct", "--calibration", "a.lcal", "--pattern", "stickman"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", "rec"]);
    assert_code(&run(&args, dir.path()), 0);

    let mut args = vec!["video", "--calibration", "a.lcal", "--frames", "1"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", "vid"]);
    assert_code(&run(&args, dir.path()), 0);

    let rec = std::fs::read(dir.path().join("rec/scene_raw.pgm")).unwrap();
    let vid = std::fs::read(dir.path().join("vid/frame_000_raw.pgm")).unwrap();
    assert_eq!(rec, vid, "frame 0 of the video equals the single reconstruction");
}

#[test]
fn video_reports_setup_and_per_frame_phases_separately() {
    let dir = tempfile::tempdir().unwrap();
    let small: &[&str] = &["--grid", "12x12", "--sensor", "32x24", "--noiseless", "--n-avg", "1"];
    let mut args = vec!["calibrate"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", ".", "--out", "a.lcal"]);
    assert_code(&run(&args, dir.path()), 0);

    let mut args = vec![
        "video", "--calibration", "a.lcal", "--frames", "6",
        "--save-reconstructor", "r.lrec",
    ];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", "vid"]);
    assert_code(&run(&args, dir.path()), 0);

    let timing: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("vid/timing.json")).unwrap())
            .unwrap();
    assert!(timing["setup_ms"].as_f64().unwrap() > 0.0);
    assert_eq!(timing["per_frame_invert_ms"].as_array().unwrap().len(), 6);
    assert!(timing["mean_invert_ms"].as_f64().unwrap() > 0.0);
    assert!(timing["mean_with_processing_ms"].as_f64().unwrap() >= timing["mean_invert_ms"].as_f64().unwrap());

    // the saved reconstructor drives the same animation
    let mut args = vec!["video", "--reconstructor", "r.lrec", "--frames", "2"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", "vid2"]);
    assert_code(&run(&args, dir.path()), 0);
    let a = std::fs::read(dir.path().join("vid/frame_000_raw.pgm")).unwrap();
    let b = std::fs::read(dir.path().join("vid2/frame_000_raw.pgm")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_precedence_env_then_flag() {
    let dir = tempfile::tempdir().unwrap();
    let args_common = ["calibrate", "--grid", "4x4", "--sensor", "16x12", "--n-avg", "2", "--out-dir", "."];

    let mut with_flag = bin();
    with_flag.args(args_common).args(["--seed", "7", "--out", "flag.lcal"]).current_dir(dir.path());
    assert!(with_flag.output().unwrap().status.success());

    let mut with_env = bin();
    with_env.args(args_common).args(["--out", "env.lcal"]).env("LENSLESS_SEED", "7").current_dir(dir.path());
    assert!(with_env.output().unwrap().status.success());

    let mut flag_wins = bin();
    flag_wins
        .args(args_common)
        .args(["--seed", "7", "--out", "both.lcal"])
        .env("LENSLESS_SEED", "9")
        .current_dir(dir.path());
    assert!(flag_wins.output().unwrap().status.success());

    let mut bad_env = bin();
    bad_env.args(args_common).env("LENSLESS_SEED", "not-a-number").current_dir(dir.path());
    assert_eq!(bad_env.output().unwrap().status.code(), Some(1));

    let flag = std::fs::read(dir.path().join("flag.lcal")).unwrap();
    let env = std::fs::read(dir.path().join("env.lcal")).unwrap();
    let both = std::fs::read(dir.path().join("both.lcal")).unwrap();
    assert_eq!(flag, env);
    assert_eq!(flag, both);
}

#[test]
fn single_distance_sweep_degenerates_to_calibrate_plus_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let small: &[&str] = &["--grid", "12x12", "--sensor", "32x24", "--noiseless", "--n-avg", "1"];
    let mut args = vec!["sweep", "--distances", "250"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", "."]);
    assert_code(&run(&args, dir.path()), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["entries"].as_array().unwrap().len(), 1);
    assert_eq!(summary["refocus_selected_distance_mm"], 250.0);
    for f in ["decay.csv", "corr_h.csv", "corr_v.csv", "corr_diag.csv"] {
        assert!(dir.path().join("sweep/d250mm").join(f).exists(), "{f}");
    }
}

#[test]
fn ablate_without_flags_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let small: &[&str] = &["--grid", "12x12", "--sensor", "32x24", "--noiseless", "--n-avg", "1"];
    let mut args = vec!["ablate"];
    args.extend_from_slice(small);
    args.extend_from_slice(&["--out-dir", "."]);
    assert_code(&run(&args, dir.path()), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ablate/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["baseline"], report["ablated"]);
}

#[test]
fn verify_detects_a_seed_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--grid", "4x4", "--sensor", "16x12", "--n-avg", "2"];
    let mut c = vec!["calibrate"];
    c.extend_from_slice(&args);
    c.extend_from_slice(&["--seed", "1", "--out-dir", ".", "--out", "a.lcal"]);
    assert_code(&run(&c, dir.path()), 0);

    let mut v = vec!["verify", "--calibration", "a.lcal"];
    v.extend_from_slice(&args);
    v.extend_from_slice(&["--seed", "1"]);
    assert_code(&run(&v, dir.path()), 0);

    let mut v = vec!["verify", "--calibration", "a.lcal"];
    v.extend_from_slice(&args);
    v.extend_from_slice(&["--seed", "2"]);
    assert_code(&run(&v, dir.path()), 2);
}

#[test]
fn info_rejects_unknown_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.bin"), b"whatever").unwrap();
    let res = run(&["info", "x.bin"], dir.path());
    assert_code(&res, 2);
}
