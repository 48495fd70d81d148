use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn famreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_famreg")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

/// The single stderr line of a failed run, parsed.
fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.trim_end().lines().count(), 1, "{text}");
    serde_json::from_str(text.trim_end()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--angle",
        "20",
        "--in-plane",
        "30",
        "--transform",
        "rot=10,scale=1.1,tx=25,ty=-5",
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    stdout_json(&famreg(&args));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn version_names_the_format() {
    let out = famreg(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains(&format!("format {}", famreg::pipeline::FORMAT_VERSION)));
}

#[test]
fn usage_errors_are_one_json_line() {
    let err = error_json(&famreg(&["register"]));
    assert_eq!(err["error"], "usage");
    assert_eq!(famreg(&["register"]).status.code(), Some(2));
    let err = error_json(&famreg(&["register", "a.png", "b.png", "--mode", "rigid"]));
    assert!(err["message"].as_str().unwrap().contains("rigid"));
}

#[test]
fn error_kinds_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = famreg(&["mask", p(&dir.path().join("nope.png")), p(&dir.path().join("m.pgm"))]);
    assert_eq!(error_json(&missing)["error"], "io");
    assert_eq!(missing.status.code(), Some(30));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "mode = fam\ntps_lambda = -1\n").unwrap();
    let bad = famreg(&["orient", "x.pgm", "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(27));
    assert_eq!(error_json(&bad)["error"], "config_range");

    fs::write(&cfg, "mode = fam\nbogus\n").unwrap();
    let bad = famreg(&["orient", "x.pgm", "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(26));
    assert!(error_json(&bad)["message"].as_str().unwrap().contains("line 2"));
}

#[test]
fn module_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    for f in ["fixed.png", "moving.png", "fixed_mask.pgm", "moving_mask.pgm", "fixed_keypoints.json", "transform.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let truth: Value = serde_json::from_str(&fs::read_to_string(d.join("transform.json")).unwrap()).unwrap();
    assert!(truth["moving_to_fixed"]["matrix"].is_array());

    let mask = d.join("mask.pgm");
    let summary = stdout_json(&famreg(&["mask", p(&d.join("fixed.png")), p(&mask)]));
    assert!(summary["foreground"].as_u64().unwrap() > 10_000);
    let ours = famreg::io::load_mask(&mask).unwrap();
    let truth_mask = famreg::io::load_mask(&d.join("fixed_mask.pgm")).unwrap();
    assert!(famreg::metrics::dice(&ours, &truth_mask).unwrap() > 0.98);

    let dir_json = stdout_json(&famreg(&["orient", p(&mask)]));
    let angle = dir_json["angle"].as_f64().unwrap();
    assert!((angle - 30.0).abs() <= 2.0, "{angle}");
    assert_eq!(dir_json["method"], "min_rect");
    let ex = stdout_json(&famreg(&["orient", p(&mask), "--method", "exhaustive", "--step", "2"]));
    assert_eq!(ex["method"], "exhaustive");

    let csv = d.join("curve.csv");
    stdout_json(&famreg(&["curve", p(&mask), "--csv", p(&csv)]));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("column,raw,filtered"));
    assert!(text.lines().count() > ours.width());

    let kp = d.join("kp.json");
    let summary = stdout_json(&famreg(&["keypoints", p(&mask), "--json", p(&kp)]));
    assert_eq!(summary["points"], 20);
    let written: Value = serde_json::from_str(&fs::read_to_string(&kp).unwrap()).unwrap();
    assert_eq!(written["keypoints"]["points"].as_array().unwrap().len(), 20);
}

#[test]
fn register_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--deform", "3"]);
    let out = d.join("reg");
    let debug = d.join("debug");
    let report = stdout_json(&famreg(&[
        "register",
        p(&d.join("fixed.png")),
        p(&d.join("moving.png")),
        "--mode",
        "fam-tps",
        "--ransac",
        "4",
        "--out-dir",
        p(&out),
        "--debug-dir",
        p(&debug),
    ]));
    assert!(report["dice"].as_f64().unwrap() >= 0.97);
    assert_eq!(report["parameters"]["mode"], "fam-tps");
    assert_eq!(report["parameters"]["ransac"], 4.0);
    for f in ["warped.png", "overlay.png", "transform.json", "report.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let dump: Value = serde_json::from_str(&fs::read_to_string(out.join("transform.json")).unwrap()).unwrap();
    assert!(dump["tps"]["weights"].is_array());
    assert_eq!(fs::read_dir(&debug).unwrap().count(), 12);

    let eval = stdout_json(&famreg(&[
        "evaluate",
        p(&d.join("fixed_mask.pgm")),
        p(&debug.join("06_warped_mask.pgm")),
        "--keypoints",
        p(&d.join("fixed_keypoints.json")),
        p(&d.join("moving_keypoints.json")),
        "--transform",
        p(&out.join("transform.json")),
    ]));
    assert!(eval["dice"].as_f64().unwrap() >= 0.97);
    assert!(eval["keypoint_ed_mean"].as_f64().unwrap() < 7.5);

    // Ground truth: only the 3 px edge bump remains.
    let exact = stdout_json(&famreg(&[
        "evaluate",
        p(&d.join("fixed_mask.pgm")),
        p(&d.join("fixed_mask.pgm")),
        "--keypoints",
        p(&d.join("fixed_keypoints.json")),
        p(&d.join("moving_keypoints.json")),
        "--transform",
        p(&d.join("transform.json")),
    ]));
    assert_eq!(exact["dice"], 1.0);
    let residual = exact["keypoint_ed_mean"].as_f64().unwrap();
    assert!(residual > 0.0 && residual <= 3.0, "{residual}");
}

#[test]
fn failed_register_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    let blank = famreg::raster::Image::filled(900, 900, &[70, 70, 70]).unwrap();
    famreg::io::save_image(&blank, &d.join("blank.png")).unwrap();
    let out = d.join("reg");
    let run = famreg(&["register", p(&d.join("fixed.png")), p(&d.join("blank.png")), "--out-dir", p(&out)]);
    let err = error_json(&run);
    assert_eq!(err["stage"], "moving/mask");
    assert_eq!(err["error"], "degenerate_histogram");
    assert_eq!(run.status.code(), Some(12));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().count() == 0);
}

#[test]
fn register_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--deform", "2"]);
    let run = |name: &str| {
        let out = d.join(name);
        stdout_json(&famreg(&[
            "register",
            p(&d.join("fixed.png")),
            p(&d.join("moving.png")),
            "--mode",
            "fam-tps",
            "--ransac",
            "4",
            "--out-dir",
            p(&out),
        ]));
        ["warped.png", "overlay.png", "transform.json", "report.json"].map(|f| fs::read(out.join(f)).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn batch_reports_failed_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &[]);
    fs::write(
        d.join("jobs.txt"),
        "# name fixed moving\npair fixed.png moving.png\nbroken fixed.png missing.png\n",
    )
    .unwrap();
    let out = d.join("out");
    let run = famreg(&["batch", p(&d.join("jobs.txt")), "--out", p(&out)]);
    assert_eq!(run.status.code(), Some(40));
    assert_eq!(error_json(&run)["error"], "batch_job_failed");
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let jobs = summary["jobs"].as_array().unwrap();
    assert_eq!(jobs[0]["status"], "ok");
    assert_eq!(jobs[1]["error_kind"], "io");
    assert!(out.join("pair/warped.png").exists());
}
