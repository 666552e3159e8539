//! Exit-code and wiring tests against the compiled binary.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

fn geofuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geofuse"))
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("geofuse-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn full_workflow_succeeds() {
    let dir = work_dir("ok");
    fs::write(
        dir.join("scenario.txt"),
        "shape = circle\npath_length = 100\nspeed = 5\nsample_rate = 20\n",
    )
    .unwrap();
    let sim = dir.join("sim");
    let status = geofuse()
        .args(["simulate", "--scenario"])
        .arg(dir.join("scenario.txt"))
        .args(["--seed", "1", "--out"])
        .arg(&sim)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    fs::write(
        dir.join("fuse.txt"),
        "odometry = sim/odometry.txt\ngps = sim/gps.txt\nenable_mag = false\nenable_baro = false\ngps_base_sigma = 0.5\n",
    )
    .unwrap();
    let out = dir.join("out");
    let status = geofuse()
        .args(["fuse", "--config"])
        .arg(dir.join("fuse.txt"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("fused.txt").is_file());
    assert!(out.join("highrate.txt").is_file());
    assert!(out.join("run_log.txt").is_file());

    let status = geofuse()
        .args(["evaluate", "--est"])
        .arg(out.join("fused.txt"))
        .arg("--gt")
        .arg(sim.join("truth.txt"))
        .args(["--rpe-lengths", "20,50", "--out"])
        .arg(dir.join("eval"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.join("eval").join("report.kv").is_file());

    let status = geofuse()
        .args(["plot", "--out"])
        .arg(dir.join("plot.txt"))
        .arg(sim.join("truth.txt"))
        .arg(out.join("fused.txt"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn config_errors_exit_1() {
    let dir = work_dir("cfg");
    // unknown key
    fs::write(dir.join("bad.txt"), "odometry = x.txt\nbogus_key = 1\n").unwrap();
    let status = geofuse()
        .args(["fuse", "--config"])
        .arg(dir.join("bad.txt"))
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // referenced input file missing
    fs::write(dir.join("missing.txt"), "odometry = does_not_exist.txt\n").unwrap();
    let status = geofuse()
        .args(["fuse", "--config"])
        .arg(dir.join("missing.txt"))
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = work_dir("data");
    // malformed trajectory line
    fs::write(dir.join("est.txt"), "0 1 2 3 1 0 0\n").unwrap();
    fs::write(dir.join("gt.txt"), "0 0 0 0 1 0 0 0\n").unwrap();
    let status = geofuse()
        .args(["evaluate", "--est"])
        .arg(dir.join("est.txt"))
        .arg("--gt")
        .arg(dir.join("gt.txt"))
        .arg("--out")
        .arg(dir.join("eval"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // association failure
    fs::write(dir.join("est.txt"), "0 0 0 0 1 0 0 0\n").unwrap();
    fs::write(dir.join("gt.txt"), "5 0 0 0 1 0 0 0\n").unwrap();
    let status = geofuse()
        .args(["evaluate", "--est"])
        .arg(dir.join("est.txt"))
        .arg("--gt")
        .arg(dir.join("gt.txt"))
        .arg("--out")
        .arg(dir.join("eval"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn usage_error_exits_nonzero() {
    let status = geofuse().arg("frobnicate").status().unwrap();
    assert_ne!(status.code(), Some(0));
}
