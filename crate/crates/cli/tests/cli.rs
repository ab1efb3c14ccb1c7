//! Subcommand behavior through the installed binary.

use std::path::Path;
use std::process::{Command, Output};

fn courtsight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_courtsight"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("COURTSIGHT_OUT")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 5] = [
    "--scenario.duration_s=2",
    "--scenario.players=4",
    "--lidar.h_res=0.6",
    "--lidar.v_res=0.6",
    "--simulate.write_clouds=true",
];

fn simulate(dir: &Path) {
    let mut args = vec!["simulate", "-o", path(dir)];
    args.extend(SMALL);
    let out = courtsight(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_calibration_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = courtsight(&["track", "-d", path(dir.path()), "-o", path(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("calibration"));
}

#[test]
fn empty_cloud_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let clouds = dir.path().join("clouds");
    std::fs::remove_dir_all(&clouds).unwrap();
    std::fs::create_dir(&clouds).unwrap();
    let out = courtsight(&["track", "-d", path(dir.path()), "-o", path(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("out/tracks_lidar.txt").exists());
}

#[test]
fn unknown_key_and_bad_value_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = path(dir.path());
    assert_eq!(courtsight(&["simulate", "-o", o, "--scenario.playerz", "3"]).status.code(), Some(2));
    assert_eq!(courtsight(&["simulate", "-o", o, "--scenario.players", "many"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "tracker.max_lost_frames = 5\nnot a pair\n").unwrap();
    let out = courtsight(&["simulate", "-c", path(&cfg), "-o", o]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_ground_truth_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let gt = dir.path().join("gt.txt");
    let mut text = std::fs::read_to_string(&gt).unwrap();
    text.insert_str(text.find('\n').unwrap() + 1, "0.100 7 x 1 0.6 0.6\n");
    std::fs::write(&gt, text).unwrap();
    let out = courtsight(&["track", "-d", path(dir.path()), "-o", path(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fusion_without_features_reproduces_lidar_tracks() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out_dir = dir.path().join("out");
    let (d, o) = (path(dir.path()), path(&out_dir));
    assert!(courtsight(&["track", "-d", d, "-o", o]).status.success());
    let fused = courtsight(&["track-fusion", "-d", d, "-o", o, "--embedding.source", "none"]);
    assert!(fused.status.success());
    let lidar = std::fs::read(out_dir.join("tracks_lidar.txt")).unwrap();
    assert_eq!(lidar, std::fs::read(out_dir.join("tracks_fusion.txt")).unwrap());
    let sessions = std::fs::read_to_string(out_dir.join("sessions.txt")).unwrap();
    assert!(sessions.lines().all(|l| l.contains("status=unrepaired")), "{sessions}");
}

#[test]
fn evaluate_and_report_cover_every_method() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path());
    let out_dir = dir.path().join("out");
    let (d, o) = (path(dir.path()), path(&out_dir));
    assert!(courtsight(&["track-fusion", "-d", d, "-o", o]).status.success());
    let timing = std::fs::read_to_string(out_dir.join("timing_fusion.txt")).unwrap();
    for key in ["detection_tracking ", "fusion_reid ", "total ", "frames_per_second "] {
        assert!(timing.lines().any(|l| l.starts_with(key)), "{timing}");
    }
    let lidar = format!("lidar={o}/tracks_lidar.txt");
    let fusion = format!("fusion={o}/tracks_fusion.txt");
    let eval = courtsight(&["evaluate", "-d", d, "-o", o, &lidar, &fusion]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let report = courtsight(&["report", "-o", o]);
    assert!(report.status.success());
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("method,metric,value\n"));
    for method in ["lidar", "fusion"] {
        for metric in ["MOTA", "IDF1", "HOTA", "DetA", "AssA", "R_ID"] {
            assert!(csv.contains(&format!("{method},{metric},")), "{method} {metric}");
        }
    }
    // tracks evaluated against themselves are perfect
    let gt = format!("gt={d}/gt.txt");
    assert!(courtsight(&["evaluate", "-d", d, "-o", o, &gt]).status.success());
    let kv = std::fs::read_to_string(out_dir.join("metrics_gt.txt")).unwrap();
    for line in ["MOTA=1.000000", "IDF1=1.000000", "HOTA=1.000000"] {
        assert!(kv.contains(line), "{kv}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# short scene\nscenario.duration_s = 1\nscenario.players = 2\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(courtsight(&["simulate", "-c", path(&cfg), "-o", path(&a)]).status.success());
    assert!(courtsight(&["simulate", "-c", path(&cfg), "-o", path(&b), "--scenario.players", "3"]).status.success());
    let ids = |p: &Path| -> std::collections::BTreeSet<String> {
        std::fs::read_to_string(p.join("gt.txt"))
            .unwrap()
            .lines()
            .map(|l| l.split_whitespace().nth(1).unwrap().to_string())
            .collect()
    };
    assert_eq!(ids(&a).len(), 2);
    assert_eq!(ids(&b).len(), 3);
    assert_eq!(std::fs::read_to_string(a.join("gt.txt")).unwrap().lines().count(), 2 * 10);
}
