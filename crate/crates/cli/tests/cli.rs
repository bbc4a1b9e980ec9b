use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn nozzle(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nozzle"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn value(report: &serde_json::Value, name: &str) -> f64 {
    report["values"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == name)
        .unwrap_or_else(|| panic!("no value {name}"))["value"]
        .as_f64()
        .unwrap()
}

#[test]
fn potential_run_writes_report_and_fields() {
    let tmp = TempDir::new().unwrap();
    let out = nozzle(&["potential", "--set", "grid.n=9", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&tmp.path().join("o"), "potential-report.json");
    let q = value(&r, "min_u1");
    assert!((q - 0.3472963553338607).abs() < 1e-6);
    let csv = fs::read(tmp.path().join("o/potential-fields.csv")).unwrap();
    let hash = r["outputs"]["potential-fields.csv"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(hash));
    assert!(String::from_utf8(csv).unwrap().starts_with("x1,x2,x3,phi,u1,u2,u3,rho,mach"));
}

#[test]
fn config_file_and_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "[grid]\nn = 9\n[boundary]\na2 = 0.2\n[output]\ndir = \"a\"\n",
    )
    .unwrap();
    for d in ["a", "b"] {
        let out = nozzle(&["potential", "--config", "run.toml", "--out", d], tmp.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(tmp.path().join("a/potential-fields.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/potential-fields.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let run = |threads: &str, dir: &str| {
        Command::new(env!("CARGO_BIN_EXE_nozzle"))
            .args(["potential", "--set", "grid.n=9", "--set", "boundary.a2=0.2", "--out", dir])
            .env("NOZZLE_THREADS", threads)
            .current_dir(tmp.path())
            .output()
            .unwrap()
    };
    assert!(run("1", "one").status.success());
    assert!(run("3", "three").status.success());
    let parse = |d: &str| -> Vec<f64> {
        fs::read_to_string(tmp.path().join(d).join("potential-fields.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .flat_map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
            .collect()
    };
    let (a, b) = (parse("one"), parse("three"));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = nozzle(&["potential", "--set", "gas.gamma=0.9"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    fs::write(tmp.path().join("bad.toml"), "[grid]\nn = 9\nspacing = 2\n").unwrap();
    let out = nozzle(&["potential", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let out = Command::new(env!("CARGO_BIN_EXE_nozzle"))
        .args(["potential"])
        .env("NOZZLE_THREADS", "zero")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn supercritical_flux_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let out = nozzle(&["potential", "--set", "grid.n=5", "--set", "potential.theta=1.3"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn euler_run_reports_residuals() {
    let tmp = TempDir::new().unwrap();
    let out = nozzle(
        &["euler", "--set", "grid.n=9", "--epsilon-kappa", "0.01", "--epsilon-b", "0.01", "--fp-tol", "1e-8", "--out", "e"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&tmp.path().join("e"), "euler-report.json");
    assert!(value(&r, "worst_history_ratio") < 0.9);
    assert!(value(&r, "omega_max") > 0.0);
    for name in ["mass", "bernoulli", "vorticity", "momentum", "inlet", "flux", "curl"] {
        assert!(value(&r, &format!("residual_{name}")).is_finite());
    }
    assert!(tmp.path().join("e/euler-fields.csv").exists());
    assert!(tmp.path().join("e/euler-history.csv").exists());
}

#[test]
fn verify_quick_passes_then_detects_tampered_fixtures() {
    let tmp = TempDir::new().unwrap();
    let out = nozzle(&["verify", "--level", "quick", "--out", "v"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(!stdout.contains("FAIL"));
    let path = tmp.path().join("v/fixtures.json");
    assert!(path.exists());
    let text = fs::read_to_string(&path).unwrap().replace("\"sha256\": \"", "\"sha256\": \"0");
    fs::write(&path, text).unwrap();
    let out = nozzle(&["verify", "--level", "quick", "--out", "v"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn critical_theta_and_streamline_run() {
    let tmp = TempDir::new().unwrap();
    let out = nozzle(
        &["critical-theta", "--set", "grid.n=5", "--set", "critical.m=\"16\"", "--out", "c"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&tmp.path().join("c"), "critical-theta-report.json");
    let (lo, hi) = (value(&r, "bracket_low_m16"), value(&r, "bracket_high_m16"));
    assert!(lo <= 0.998504 && 0.998504 <= hi);
    let out = nozzle(&["streamline", "--set", "grid.n=9", "--set", "boundary.a3=0.2", "--out", "s"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let r = report(&tmp.path().join("s"), "streamline-report.json");
    assert!(value(&r, "max_foot_point_drift") > 0.0);
}
