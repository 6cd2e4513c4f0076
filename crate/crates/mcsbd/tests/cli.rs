//! CLI behavior: exit codes, file plumbing, and run-to-run determinism.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcsbd"))
}

#[test]
fn help_exits_zero() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["solve", "solve2d", "convergence", "vary-theta", "phase-pn", "geometry"] {
        assert!(text.contains(sub), "usage text missing subcommand {sub}");
    }
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let out = bin().args(["phase-pn", "--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage") || err.contains("--help"));
}

#[test]
fn config_error_exits_one() {
    // trials = 0 is invalid.
    let out = bin()
        .args(["vary-theta", "--n", "16", "--p", "4", "--theta", "0.25", "--trials", "0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runtime_error_exits_two() {
    let out = bin()
        .args(["solve", "--input", "/definitely/missing.bin", "--theta", "0.3", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phase_pn_runs_are_bit_identical() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let run = |dir: &std::path::Path, threads: &str| {
        let out = bin()
            .env("MCSBD_THREADS", threads)
            .args([
                "phase-pn",
                "--n", "16,24",
                "--p", "5,10",
                "--theta", "0.25",
                "--loss", "huber",
                "--trials", "3",
                "--seed", "7",
                "--phase1-iters", "20",
                "--out", dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(d1.path(), "1");
    run(d2.path(), "2");
    for name in ["phase_pn_cells.csv", "phase_pn_trials.csv"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs across runs/thread counts");
    }
}

#[test]
fn toml_config_loads_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("spec.toml");
    std::fs::write(
        &config,
        r#"
n = [16]
p = [6]
theta = [0.25]
losses = ["huber"]
trials = 2
seed = 9
phase1_iters = 10
rounding_iters = 30
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args([
            "vary-theta",
            "--config", config.to_str().unwrap(),
            // Flag override on top of the file.
            "--theta", "0.3",
            "--out", out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let cells = std::fs::read_to_string(out_dir.join("vary_theta_cells.csv")).unwrap();
    assert!(cells.contains("16,6,0.3,huber"), "override should win:\n{cells}");

    // Unknown keys in the file are configuration errors.
    std::fs::write(&config, "definitely_not_a_key = 1\n").unwrap();
    let out = bin()
        .args(["vary-theta", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn solve_round_trips_through_files() {
    use mcsbd::io;
    use mcsbd::model::GroundTruth;

    let dir = tempfile::tempdir().unwrap();
    let truth = GroundTruth::synthesize(48, 24, 0.25, 31).unwrap();
    let input = dir.path().join("truth.bin");
    io::save_ground_truth_bin(&input, &truth).unwrap();

    let out_dir = dir.path().join("result");
    let out = bin()
        .args([
            "solve",
            "--input", input.to_str().unwrap(),
            "--loss", "huber",
            "--mu", "1e-2",
            "--out", out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("recovery.json").exists());
    assert!(out_dir.join("a_star.bin").exists());
    assert!(out_dir.join("x_star.bin").exists());
    assert!(out_dir.join("phase1_trace.csv").exists());
    assert!(out_dir.join("phase2_trace.csv").exists());
    let metrics = std::fs::read_to_string(out_dir.join("recovery.json")).unwrap();
    assert!(metrics.contains("rho_acc"));
}

#[test]
fn solve2d_runs_on_frame_stack() {
    use mcsbd::io;
    use mcsbd::solver2d::{forward2d, gaussian_psf, GroundTruth2d};

    let dir = tempfile::tempdir().unwrap();
    let psf = gaussian_psf(16, 16, 6, 0.8).unwrap();
    let truth = GroundTruth2d::synthesize(&psf, 40, 0.08, 5).unwrap();
    let stack = forward2d(&truth).unwrap();
    let input = dir.path().join("frames.bin");
    io::save_frames_bin(&input, stack.frames()).unwrap();

    let out_dir = dir.path().join("result2d");
    let out = bin()
        .args([
            "solve2d",
            "--input", input.to_str().unwrap(),
            "--theta", "0.08",
            "--phase1-iters", "60",
            "--out", out_dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("a_star.bin").exists());
    let frames = io::load_frames_bin(&out_dir.join("x_star.bin")).unwrap();
    assert_eq!(frames.len(), 40);
}
