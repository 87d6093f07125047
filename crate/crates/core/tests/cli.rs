use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn dampwave(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_dampwave")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn validate_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\n[domain]\nm1 = 2.0\n");
    let out = dir.path().join("out");
    let (code, stdout) = dampwave(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["command"], "validate");
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report, read_json(&out.join("validate.json")));
}

#[test]
fn config_errors_exit_2_with_json_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[domain]\nr_o = 0.6\n");
    let (code, stdout) = dampwave(&["validate", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 2);
    let record: Value = serde_json::from_str(&stdout).unwrap();
    assert!(record["error"]["messages"][0].as_str().unwrap().starts_with("domain.r_o"));
}

#[test]
fn exit_codes_by_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    // FDTD step above the CFL limit.
    let cfg = write_config(dir.path(), "[solver]\nkind = \"fdtd\"\nresolution = 8\ndt = 0.25\nt_final = 1.0\nrecord_every = 0.25\n");
    let (code, _) = dampwave(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 2);
    let cfg = write_config(dir.path(), "[solver]\nt_final = 5.0\n[analysis]\nfit_window = [1.0, 4.0]\n[damping]\nalpha_max = 0.0\n");
    // An undamped trace wobbles at rounding level, which the halving
    // analysis rejects as non-monotone.
    let (code, stdout) = dampwave(&["decay-fit", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 3);
    assert!(stdout.contains("non-increasing"));
    let cfg = write_config(dir.path(), "[initial]\nmode = 5000\n[solver]\nmodes = 10\n");
    let (code, _) = dampwave(&["simulate", "--config", &cfg, "--out", dir.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 2);
}

#[test]
fn undamped_simulation_conserves_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[damping]\nalpha_max = 0.0\n[solver]\nmodes = 20\nt_final = 10.0\nrecord_every = 0.5\n[initial]\npreset = \"single-mode\"\nmode = 2\n",
    );
    let out = dir.path().join("sim");
    let (code, _) = dampwave(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--quiet"]);
    assert_eq!(code, 0);
    let trace = dampwave::decay::EnergyTrace::from_csv(&std::fs::read_to_string(out.join("trace.csv")).unwrap()).unwrap();
    assert_eq!(trace.len(), 21);
    let e0 = trace.energies[0];
    assert!(trace.energies.iter().all(|e| (e - e0).abs() <= 1e-12 * e0));
    assert!(std::fs::read_to_string(out.join("trace.svg")).unwrap().contains("<polyline"));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[initial]\npreset = \"random-smooth\"\n[solver]\nmodes = 30\nt_final = 4.0\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let (code, _) = dampwave(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9", "--quiet"]);
        assert_eq!(code, 0);
    }
    for file in ["trace.csv", "simulate.json", "trace.svg"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn packets_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout) = dampwave(&["packets-verify", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    let checks = report["result"]["checks"].as_array().unwrap();
    assert!(checks.len() >= 8);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn lemma_check_and_counter_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, stdout) = dampwave(&["lemma-check", "--out", out]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["result"]["hypothesis_holds"], true);
    // A nearly flat F violates the hypothesis.
    let cfg = write_config(dir.path(), "[lemma]\nrate = 1e-12\n");
    let (code, stdout) = dampwave(&["lemma-check", "--config", &cfg, "--out", out]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["result"]["hypothesis_holds"], false);
}

#[test]
fn rays_and_observability() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write_config(dir.path(), "[analysis]\npositions = 20\ndirections = 20\nstates = 10\n[solver]\nmodes = 40\n");
    let (code, stdout) = dampwave(&["rays", "--config", &cfg, "--out", out]);
    assert_eq!(code, 0);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["result"]["controlled_fraction"], 1.0);
    let cfg = write_config(dir.path(), "[analysis]\nregion = \"omega0\"\npositions = 20\ndirections = 20\n");
    let (code, _) = dampwave(&["rays", "--config", &cfg, "--out", out, "--quiet"]);
    assert_eq!(code, 4);
    let cfg = write_config(dir.path(), "[analysis]\nstates = 10\n[solver]\nmodes = 40\n");
    let (code, _) = dampwave(&["observability", "--config", &cfg, "--out", out, "--quiet"]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.path().join("observability.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}
