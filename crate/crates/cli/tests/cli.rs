//! Command-line behaviour: outputs, validation, exit codes and
//! reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_dqm");

fn dqm(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("DQM_OUT_DIR").output().expect("dqm runs")
}

fn dqm_in(args: &[&str], out: &Path) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", out.to_str().unwrap()]);
    dqm(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn clock_sync_table_has_the_expected_unit_time_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = dqm_in(&["qfi", "clock_sync"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = read(&dir.path().join("qfi.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("T,qfi_controlled,qfi_uncontrolled,bound,cfi,precision_bound"));
    let row: Vec<&str> = lines.find(|l| l.starts_with("1,")).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["1", "16", "16", "16"]);
    assert!((row[4].parse::<f64>().unwrap() - 16.0).abs() < 16e-3);
    assert_eq!(row[5], "0.125");
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);
}

#[test]
fn scenario_flag_and_positional_name_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(dqm_in(&["qfi", "radar", "--T", "1"], a.path()).status.success());
    assert!(dqm_in(&["qfi", "--scenario", "radar", "--T", "1"], b.path()).status.success());
    assert_eq!(read(&a.path().join("qfi.csv")), read(&b.path().join("qfi.csv")));
    let o = dqm_in(&["qfi", "radar", "--scenario", "clock_sync"], a.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn manifest_reproduces_every_file_byte_for_byte() {
    for args in [
        vec!["qfi", "ac_fields", "--T", "1,2", "--M", "500"],
        vec!["estimate", "radar", "--shots", "20000", "--reps", "3", "--seed", "9"],
        vec!["control-export", "radar", "--T", "0.5", "--format", "json"],
    ] {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let o = dqm_in(&args, first.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        let manifest = first.path().join("manifest.json");
        let o = dqm_in(&[args[0], "--config", manifest.to_str().unwrap()], second.path());
        assert!(o.status.success(), "{args:?} replay: {}", stderr(&o));
        let mut names: Vec<_> = fs::read_dir(first.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 2);
        for name in names {
            assert_eq!(
                fs::read(first.path().join(&name)).unwrap(),
                fs::read(second.path().join(&name)).unwrap(),
                "{args:?}: {name:?} differs"
            );
        }
    }
}

#[test]
fn repeated_seed_gives_identical_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = ["estimate", "ac_fields", "--shots", "20000", "--rounds", "2", "--seed", "4"];
    assert!(dqm_in(&args, a.path()).status.success());
    assert!(dqm_in(&args, b.path()).status.success());
    let trace = read(&a.path().join("estimate_trace.csv"));
    assert_eq!(trace, read(&b.path().join("estimate_trace.csv")));
    assert!(dqm_in(&["estimate", "ac_fields", "--shots", "20000", "--rounds", "2", "--seed", "5"], c.path())
        .status
        .success());
    assert_ne!(trace, read(&c.path().join("estimate_trace.csv")));
    assert!(trace.starts_with("T,rep,round,stage,protocol,shots,x_hat,theta_hat,running_variance\n"));
    // two separable rows, two entangled rounds
    assert_eq!(trace.lines().count(), 5);
}

#[test]
fn wrong_weight_length_is_rejected_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = dqm(&["list-scenarios", "--format", "json"]);
    let mut defs: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mut radar = defs.as_array_mut().unwrap().remove(1);
    radar["weights"] = serde_json::json!([1.0, 1.0, 1.0]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, serde_json::json!({ "definition": radar }).to_string()).unwrap();
    let o = dqm_in(&["qfi", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("weights: expected 2 entries, got 3"), "{}", stderr(&o));
    assert!(!dir.path().join("qfi.csv").exists());
}

#[test]
fn zero_weights_are_rejected_before_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let mut def: serde_json::Value =
        serde_json::from_slice(&dqm(&["list-scenarios", "--format", "json"]).stdout).unwrap();
    def[0]["weights"] = serde_json::json!([0.0, 0.0]);
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, serde_json::json!({ "definition": def[0] }).to_string()).unwrap();
    let o = dqm_in(&["qfi", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("weights"));
}

#[test]
fn unknown_config_keys_are_reported_with_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"scenario\": \"radar\",\n  \"sweeep\": [1, 2]\n}\n").unwrap();
    let o = dqm_in(&["qfi", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("sweeep") && msg.contains("line 3"), "{msg}");
}

#[test]
fn config_file_overrides_and_flags_layer_correctly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"scenario": "clock_sync", "T": [1, 2], "M": 300, "probe": "product"}"#).unwrap();
    let o = dqm_in(&["qfi", "--config", cfg.to_str().unwrap(), "--T", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table = read(&dir.path().join("qfi.csv"));
    assert_eq!(table.lines().nth(1).unwrap().split(',').take(2).collect::<Vec<_>>(), ["3", "72"]);
    let manifest: serde_json::Value = serde_json::from_str(&read(&dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["definition"]["base_steps"], 300);
    assert_eq!(manifest["summary"]["steps"][0], 900);
}

#[test]
fn validation_and_simulation_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dqm_in(&["qfi", "sonar"], dir.path()).status.code(), Some(1));
    assert_eq!(dqm_in(&["qfi", "radar", "--T", "-1"], dir.path()).status.code(), Some(1));
    assert_eq!(dqm_in(&["qfi", "radar", "--probe", "w-state"], dir.path()).status.code(), Some(1));
    assert_eq!(dqm_in(&["qfi", "radar", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(dqm(&["qfi"]).status.code(), Some(1));
    // π pulses need a fixed field axis, which the radar fields lack
    assert_eq!(dqm_in(&["qfi", "radar", "--control", "pi-pulse"], dir.path()).status.code(), Some(1));
    assert_eq!(dqm(&["--help"]).status.code(), Some(0));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none(), "nothing is written on failure");

    // a parameter no field depends on cannot be estimated
    let mut defs: serde_json::Value =
        serde_json::from_slice(&dqm(&["list-scenarios", "--format", "json"]).stdout).unwrap();
    let mut clock = defs.as_array_mut().unwrap().remove(0);
    clock["n_params"] = serde_json::json!(3);
    clock["truth"] = serde_json::json!([1.05, 1.0, 0.0]);
    clock["prior"] = serde_json::json!([1.0, 1.0, 0.0]);
    clock["weights"] = serde_json::json!([0.0, 0.0, 1.0]);
    clock.as_object_mut().unwrap().remove("domain");
    let cfg = dir.path().join("blind.json");
    fs::write(&cfg, serde_json::json!({ "definition": clock }).to_string()).unwrap();
    let out = dir.path().join("blind");
    let o = dqm_in(&["estimate", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("estimator undefined") || msg.contains("variance is unbounded"), "{msg}");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn failed_writes_leave_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // a directory squatting on the manifest name makes the last write fail
    fs::create_dir(dir.path().join("manifest.json")).unwrap();
    let o = dqm_in(&["qfi", "clock_sync", "--T", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("qfi.csv").exists());
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN).args(["qfi", "clock_sync", "--T", "1"]).env("DQM_OUT_DIR", dir.path()).output().unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("qfi.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn control_export_tables() {
    let dir = tempfile::tempdir().unwrap();
    let clock = dir.path().join("clock");
    assert!(dqm_in(&["control-export", "clock_sync", "--T", "1"], &clock).status.success());
    assert_eq!(read(&clock.join("control_T1.csv")), "step,time,qubit,cx,cy,cz\n");

    let radar = dir.path().join("radar");
    assert!(dqm_in(&["control-export", "radar", "--T", "1", "--M", "100"], &radar).status.success());
    let table = read(&radar.join("control_T1.csv"));
    let rows: Vec<Vec<f64>> =
        table.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    // two preparation rows, then −f(x̂) on both qubits at every step
    assert_eq!(rows.len(), 2 + 2 * 100);
    for r in rows.iter().filter(|r| r[0] >= 0.0) {
        let phi: f64 = if r[2] == 0.0 { 0.3 } else { 0.4 };
        assert!((r[3] + phi.sin()).abs() < 1e-11 && r[4] == 0.0 && (r[5] + phi.cos()).abs() < 1e-11);
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(&radar.join("manifest.json"))).unwrap();
    let p = &manifest["summary"]["protocols"][0];
    assert!(p["alignment_residual"].as_f64().unwrap() < 1e-10);
    assert!(p["factorization_residual"].as_f64().unwrap() < 1e-10);

    let ac = dir.path().join("ac");
    assert!(dqm_in(&["control-export", "ac_fields", "--T", "4", "--M", "1000"], &ac).status.success());
    let table = read(&ac.join("control_T4.csv"));
    let dt = 4.0 / 4000.0;
    let pulses: Vec<Vec<f64>> =
        table.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    // one flip per qubit near t = π/2; the x entry is the π-pulse rate
    assert_eq!(pulses.len(), 2);
    for p in &pulses {
        assert!((p[1] - std::f64::consts::FRAC_PI_2).abs() <= dt);
        assert!((p[3] - std::f64::consts::PI / (2.0 * dt)).abs() < 1e-6);
    }
}

#[test]
fn json_format_writes_parseable_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = dqm_in(&["qfi", "radar", "--T", "1,2", "--format", "json"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&read(&dir.path().join("qfi.json"))).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["rows"][1]["qfi_controlled"], 64.0);
    assert!(!dir.path().join("qfi.csv").exists());
}

#[test]
fn list_scenarios_names_the_builtins() {
    let o = dqm(&["list-scenarios"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["clock_sync", "radar", "ac_fields"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}
