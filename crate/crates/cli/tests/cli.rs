use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use satgkdv::grid::Grid;
use satgkdv_cli::config::InitialData;
use satgkdv_cli::initial::make_initial_data;

fn satgkdv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satgkdv")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(satgkdv(&["experiment"]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(satgkdv(&["experiment", "--config", p(&missing)]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"q": 7.0, "gamma": 0.001}"#).unwrap();
    let out = satgkdv(&["experiment", "--config", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn groundstate_writes_profile_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = satgkdv(&["groundstate", "--n", "2001", "--out-dir", p(dir.path())]);
    assert!(out.status.success());
    let summary = stdout_json(&out);
    assert!((summary["center"].as_f64().unwrap() - 3f64.powf(0.25)).abs() < 1e-6);
    let text = std::fs::read_to_string(dir.path().join("groundstate.csv")).unwrap();
    assert!(text.starts_with("x,Q,dQ"));
    assert_eq!(text.lines().count(), 2002);
}

#[test]
fn profile_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = satgkdv(&["profile-p", "--n", "2001", "--out-dir", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let left = stdout_json(&out)["left_limit"].as_f64().unwrap();
    assert!((left - 1.7254).abs() < 1e-3, "{left}");
    let out = satgkdv(&["profile-qb", "--n", "4001", "--b", "0.02", "--out-dir", p(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("profile_qb.csv")).unwrap();
    assert!(text.starts_with("y,Qb,Psi,chi"));
    let text = std::fs::read_to_string(dir.path().join("profile_p.csv")).unwrap();
    assert!(text.starts_with("y,P,Ptilde,Lambda_Q"));
    let out = satgkdv(&["profile-qb", "--b", "0.5", "--out-dir", p(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn decompose_reads_a_sampled_field() {
    let dir = tempfile::tempdir().unwrap();
    let g = Grid::make_periodic(40.0, 1024).unwrap();
    let u = make_initial_data(&InitialData::GroundState, g, 0.0, 7.0, 0).unwrap();
    let path = dir.path().join("u.csv");
    u.write_csv(&path).unwrap();
    let out = satgkdv(&["decompose", "--in", p(&path), "--gamma", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!((v["lambda"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(v["b"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn reduced_commands_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    let out = satgkdv(&["reduced", "--lambda0", "1", "--b0", "0.01", "--gamma", "1e-3", "--s-end", "100", "--out-dir", d]);
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("reduced.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["s", "t", "lambda", "b", "x", "L_of_s"]);
    let rows: Vec<Vec<f64>> =
        rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    let l0 = rows[0][5];
    assert!(rows.iter().all(|r| (r[5] - l0).abs() < 1e-8));
    assert!((rows.last().unwrap()[0] - 100.0).abs() < 1e-9);

    let out = satgkdv(&["reduced-basin", "--gamma", "1e-3", "--points", "5", "--out-dir", d]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("basin.csv")).unwrap();
    assert_eq!(text.lines().count(), 26);
    assert!(text.contains("soliton") && text.contains("exit"));

    let out = satgkdv(&["reduced", "--lambda0", "-1", "--b0", "0", "--gamma", "1e-3", "--s-end", "1", "--out-dir", d]);
    assert_eq!(out.status.code(), Some(2));
}

fn short_config(dir: &Path, initial: &str, gamma: f64, t_end: f64) -> PathBuf {
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(configs().join("exit.json")).unwrap()).unwrap();
    cfg["gamma"] = gamma.into();
    cfg["grid"]["n"] = 1024.into();
    cfg["evolution"]["t_end"] = t_end.into();
    cfg["initial"] = serde_json::from_str(initial).unwrap();
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn experiment_exit_codes_follow_the_regime() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), r#"{"kind": "scaled", "factor": 0.95}"#, 1e-3, 1.0);
    let out_dir = dir.path().join("exit");
    let out = satgkdv(&["experiment", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["regime"], "exit");
    for name in ["series.csv", "modulation.csv", "manifest.json"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }

    let cfg = short_config(dir.path(), r#"{"kind": "profile", "b0": 0.03}"#, 4e-3, 1.0);
    let out = satgkdv(&["experiment", "--config", p(&cfg), "--out-dir", p(&dir.path().join("u"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn evolve_then_track() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), r#"{"kind": "ground-state"}"#, 1e-3, 1.0);
    let run_dir = dir.path().join("run");
    let out = satgkdv(&["evolve", "--config", p(&cfg), "--out-dir", p(&run_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("u_4.csv").exists());
    let out = satgkdv(&["track", "--config", p(&cfg), "--series", p(&run_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["tracked"], 5);
    let text = std::fs::read_to_string(run_dir.join("modulation.csv")).unwrap();
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn reduced_gamma_study_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = satgkdv(&["gamma-study", "--config", p(&configs().join("gamma_study_reduced.json")), "--out-dir", p(dir.path())]);
    assert!(out.status.success());
    let report = stdout_json(&out);
    let e = report["fit"]["exponent"].as_f64().unwrap();
    assert!((e - 1.0 / 3.0).abs() < 1e-3);
    assert!(dir.path().join("study.json").exists());
}
