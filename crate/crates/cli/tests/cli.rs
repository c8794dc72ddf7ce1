use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_twoscale"));
    c.env("RUST_LOG", "warn");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn sweep_is_deterministic_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("quick_elliptic.toml");
    let mut bodies = vec![];
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o =
            run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let csv = std::fs::read_to_string(out.join("quick_elliptic.csv")).unwrap();
        assert_eq!(csv, String::from_utf8(o.stdout).unwrap());
        assert!(csv.starts_with("epsilon,e_l2,e_hcurl\n"));
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("quick_elliptic.json")).unwrap()).unwrap();
        assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
        assert!(meta["fit_hcurl"]["slope"].as_f64().unwrap() > 0.4);
        assert!(out.join("quick_elliptic.dat").exists());
        bodies.push(csv);
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn workers_from_environment() {
    let cfg = config("quick_elliptic.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("TWOSCALE_WORKERS", "2")
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("quick_elliptic.json")).unwrap()).unwrap();
    assert_eq!(meta["workers"], 2);
}

#[test]
fn check_passes_with_exit_zero() {
    let o = run(&["check", "--scope", "mimetic,identity,cell"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("[PASS]")));
}

#[test]
fn check_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("asym.toml");
    std::fs::write(
        &path,
        r#"
mode = "maxwell3d"
epsilons = [0.5, 0.25, 0.125]

[model]
family = "constant"
value = [[2.0, 0.5, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]
symmetric = false

[grid]
fine = [8, 8, 8]
"#,
    )
    .unwrap();
    let o = run(&["check", "--scope", "bounds", "--resolution", "8", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("[FAIL]") && l.contains("config:model: coefficient symmetric")));
}

#[test]
fn errors_exit_one() {
    let o = run(&["sweep", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["sweep"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cell_prints_tensors() {
    let o = run(&["cell", "--config", config("smooth_maxwell.toml").to_str().unwrap(), "--resolution", "64"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let b0 = v[0]["entries"][0].as_f64().unwrap();
    assert!((b0 - 3f64.sqrt()).abs() < 1e-6);
    assert_eq!(v[1]["name"], "a0");
}

#[test]
fn corrector_error_and_solve() {
    let cfg = config("quick_elliptic.toml");
    let o = run(&["corrector-error", "--config", cfg.to_str().unwrap(), "--eps", "0.125"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(row["epsilon"], 0.125);
    assert!(row["e_hcurl"].as_f64().unwrap() > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--eps", "0.125", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("u0.snap").exists() && dir.path().join("u_eps.snap").exists());
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(s["oscillatory"]["converged"], true);

    let o = run(&["tensors", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let t: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(t["cell_solves"], 1);
}
