use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use accguard_core::dataset::{Provenance, WindowSet};
use serde_json::Value;

fn accguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_accguard"))
        .args(args)
        .env_remove("ACCGUARD_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = accguard(args);
    assert!(
        out.status.success(),
        "accguard {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> Value {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.json");
    serde_json::from_str(&std::fs::read_to_string(PathBuf::from(name)).unwrap()).unwrap()
}

/// Re-runs `manifest` and asserts every listed file comes back byte-identical.
fn replay_is_identical(manifest: &Path, files: &[&Path], extra: &[&str]) {
    let before: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    let mut args = vec!["replay", s(manifest)];
    args.extend_from_slice(extra);
    ok(&args);
    for (f, b) in files.iter().zip(before) {
        assert!(std::fs::read(f).unwrap() == b, "{} changed on replay", f.display());
    }
}

#[test]
fn out_of_range_mpr_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = accguard(&["simulate", "--mpr", "1.5", "--seed", "1", "--out", s(&dir.path().join("t.csv"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mpr must be in [0,1]"), "{}", stderr(&out));
    assert!(!dir.path().join("t.csv").exists());
}

#[test]
fn attack_starting_after_the_run_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = accguard(&["repro-table1", "--attack", "dos", "--duration", "40", "--window-s", "1",
        "--seed", "1", "--out", s(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("starts at 80 s"), "{}", stderr(&out));
}

#[test]
fn unknown_flag_and_missing_seed_exit_2() {
    let out = accguard(&["simulate", "--bogus", "1", "--seed", "1", "--out", "x.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--bogus"));
    let out = accguard(&["simulate", "--out", "x.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--seed"));
    let out = accguard(&["simulate", "--attack", "laser", "--seed", "1", "--out", "x.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn baseline_simulation_resolves_every_default() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    ok(&[
        "simulate", "--ring-m", "200", "--n-veh", "20", "--mpr", "0.5", "--attack", "control", "--seed", "7",
        "--duration", "20", "--out", s(&traj),
    ]);
    let text = std::fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("time_s,veh_id,class,attacked,pos_m,speed_mps,accel_mps2,gap_m\n"));
    // 20 s at 33 ms per step, one row per vehicle and step
    assert_eq!(text.lines().count(), 1 + 20 * 606);
    let m = manifest(&traj);
    assert_eq!(m["subcommand"], "simulate");
    let c = &m["command"]["simulate"];
    assert_eq!(c["ring_m"], 200.0);
    assert_eq!(c["fleet"]["n_veh"], 20);
    assert_eq!(c["attack"]["attack"], "control");
    assert_eq!(c["attack"]["attack_start"], 0.0);
    assert_eq!(c["attack"]["xi_std"], 5f64.sqrt());
    assert_eq!(m["seeds"], serde_json::json!([7]));
    replay_is_identical(&PathBuf::from(format!("{}.manifest.json", traj.display())), &[&traj], &[]);
}

#[test]
fn command_line_flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# baseline\nmpr = 0.2\nseed = 3\nduration = 5\nattack = dos\n").unwrap();
    let traj = dir.path().join("t.csv");
    ok(&["simulate", "--config", s(&cfg), "--mpr", "0.4", "--out", s(&traj)]);
    let c = &manifest(&traj)["command"]["simulate"];
    assert_eq!(c["fleet"]["mpr"], 0.4);
    assert_eq!(c["seed"], 3);
    assert_eq!(c["duration"], 5.0);
    assert_eq!(c["attack"]["attack_start"], 80.0);
    assert_eq!(c["attack"]["attack_end"], 130.0);

    std::fs::write(&cfg, "mpr = 2\n").unwrap();
    let out = accguard(&["simulate", "--config", s(&cfg), "--seed", "1", "--out", s(&traj)]);
    assert_eq!(code(&out), 2);
    let out = accguard(&["simulate", "--config", s(&dir.path().join("missing.cfg")), "--seed", "1", "--out", s(&traj)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn fundamental_diagram_writes_curve_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fd.csv");
    let args = [
        "fd", "--lengths", "143:600:3", "--seeds", "2", "--warmup", "20", "--window", "20", "--mpr", "0", "--seed", "5",
        "--out", s(&csv),
    ];
    let mut with_jobs = args.to_vec();
    with_jobs.extend(["--jobs", "3"]);
    ok(&with_jobs);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fd.summary.json")).unwrap()).unwrap();
    assert!(summary["capacity_vph"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["n_lengths"], 3);
    let m = manifest(&csv);
    assert_eq!(m["seeds"], serde_json::json!([5, 6]));
    let summary_path = dir.path().join("fd.summary.json");
    replay_is_identical(&dir.path().join("fd.csv.manifest.json"), &[&csv, &summary_path], &["--jobs", "1"]);

    let out = accguard(&["fd", "--lengths", "143:2000", "--seed", "1", "--out", s(&csv)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("start:stop:count"));
}

/// Tiny end-to-end run exercising every stage, replay and worker-count independence.
#[test]
fn pipeline_stages_replay_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let data = p("data");
    ok(&[
        "dataset", "--window-s", "1", "--duration", "40", "--attack", "sensor", "--test-normal", "8",
        "--test-attacked", "8", "--min-train", "40", "--seed", "11", "--jobs", "2", "--out-dir", s(&data),
    ]);
    let sets: Vec<WindowSet> = ["train", "validation", "test"]
        .iter()
        .map(|n| WindowSet::from_bytes(&std::fs::read(data.join(format!("{n}.accw"))).unwrap()).unwrap())
        .collect();
    assert!(sets[0].windows.len() >= 40);
    assert_eq!(sets[1].windows.len(), 64);
    assert_eq!(sets[2].windows.len(), 16);
    assert!(sets[0].windows.iter().chain(&sets[1].windows).all(|w| w.label == 0));
    assert_eq!(sets[2].windows.iter().filter(|w| w.label == 1).count(), 8);
    assert_eq!(sets[0].norm, sets[2].norm);
    let files: Vec<PathBuf> = ["train", "validation", "test"].iter().map(|n| data.join(format!("{n}.accw"))).collect();
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    replay_is_identical(&data.join("dataset.manifest.json"), &refs, &["--jobs", "1"]);

    let model = p("model.ckpt");
    let train_args = [
        "train", "--data", s(&files[0]), "--epochs", "2", "--base-channels", "4", "--latent-dim", "8", "--batch-size",
        "8", "--seed", "3", "--out", s(&model),
    ];
    ok(&train_args);
    replay_is_identical(&p("model.ckpt.manifest.json"), &[&model], &[]);

    let threshold = p("threshold.json");
    ok(&[
        "calibrate", "--model", s(&model), "--data", s(&files[1]), "--steps", "10", "--restarts", "2", "--seed", "4",
        "--out", s(&threshold),
    ]);
    let t: Value = serde_json::from_str(&std::fs::read_to_string(&threshold).unwrap()).unwrap();
    assert_eq!(t["n_validation"], 64);
    assert_eq!(t["percentile"], 90.0);
    assert_eq!(t["gamma_max"], 10);
    replay_is_identical(&p("threshold.json.manifest.json"), &[&threshold], &["--jobs", "2"]);

    let scores1 = p("scores1.csv");
    let scores3 = p("scores3.csv");
    let detect = |out: &Path, jobs: &str| {
        ok(&[
            "detect", "--model", s(&model), "--data", s(&files[2]), "--threshold", s(&threshold), "--seed", "9",
            "--jobs", jobs, "--out", s(out),
        ])
    };
    detect(&scores1, "1");
    detect(&scores3, "3");
    let text = std::fs::read_to_string(&scores1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&scores3).unwrap());
    assert!(text.starts_with("window_idx,veh_id,t_start,true_label,score,pred_label\n"));
    assert_eq!(text.lines().count(), 17);
    replay_is_identical(&p("scores1.csv.manifest.json"), &[&scores1], &["--jobs", "2"]);

    let metrics = p("metrics.json");
    ok(&["evaluate", "--scores", s(&scores1), "--out", s(&metrics)]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["n"], 16);
    let counts = &m["counts"];
    let total: u64 = ["tp", "fp", "tn", "fn"].iter().map(|k| counts[k].as_u64().unwrap()).sum();
    assert_eq!(total, 16);
    replay_is_identical(&p("metrics.json.manifest.json"), &[&metrics], &[]);

    // a threshold calibrated on another model is rejected
    let other = p("other.ckpt");
    let mut other_args = train_args.to_vec();
    *other_args.iter_mut().find(|a| **a == "3").unwrap() = "4";
    *other_args.last_mut().unwrap() = s(&other);
    ok(&other_args);
    let out = accguard(&[
        "detect", "--model", s(&other), "--data", s(&files[2]), "--threshold", s(&threshold), "--seed", "9", "--out",
        s(&p("x.csv")),
    ]);
    assert_eq!(code(&out), 2);

    // zero windows is a usage error, a corrupt model an I/O error
    let empty = p("empty.accw");
    let mut bytes = Vec::new();
    WindowSet::new(30, vec![], Provenance::default()).unwrap().write(&mut bytes).unwrap();
    std::fs::write(&empty, bytes).unwrap();
    let out = accguard(&[
        "detect", "--model", s(&model), "--data", s(&empty), "--threshold", s(&threshold), "--seed", "9", "--out",
        s(&p("e.csv")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let broken = p("broken.ckpt");
    let ckpt = std::fs::read(&model).unwrap();
    std::fs::write(&broken, &ckpt[..ckpt.len() - 5]).unwrap();
    let out = accguard(&[
        "calibrate", "--model", s(&broken), "--data", s(&files[1]), "--seed", "1", "--out", s(&p("t2.json")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn evaluate_counts_a_known_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    std::fs::write(
        &csv,
        "window_idx,veh_id,t_start,true_label,score,pred_label\n\
         0,1,0,0,1.0,0\n1,1,1,0,3.0,1\n2,2,0,1,2.0,0\n3,2,1,1,4.0,1\n4,3,0,1,5.0,1\n",
    )
    .unwrap();
    let out = dir.path().join("m.json");
    ok(&["evaluate", "--scores", s(&csv), "--out", s(&out)]);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(m["counts"], serde_json::json!({"tp": 2, "fp": 1, "tn": 1, "fn": 1}));
    assert_eq!(m["accuracy"], 0.6);
    assert_eq!(m["precision"], 2.0 / 3.0);
    assert_eq!(m["recall"], 2.0 / 3.0);
    // 5 of the 6 normal/attacked pairs are ordered correctly
    assert_eq!(m["auc"], 5.0 / 6.0);

    std::fs::write(&csv, "idx,score\n0,1\n").unwrap();
    assert_eq!(code(&accguard(&["evaluate", "--scores", s(&csv), "--out", s(&out)])), 3);
}
