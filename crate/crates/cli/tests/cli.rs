use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn fastrate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastrate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn small_config(dir: &Path, r_assumed: f64) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "schema": 1,
        "spec": {"family": "gaussian", "params": {"mean": 0.0, "std": 1.0}, "dim": 1},
        "k": 1, "d": 1, "rho": 10.0,
        "n_grid": [100, 1000, 10000],
        "trials": 50,
        "base_seed": 1,
        "erm_strategy": {"kind": "exact_1d"},
        "oracle": {"mode": "closed_form"},
        "r_assumed": r_assumed
    });
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn bounds_eval_reads_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fastrate"))
        .args(["bounds", "eval"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(br#"{"op": "admissible_beta", "r": 64, "c_entropy": 4, "alpha": 1}"#)
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_json(&out)["beta_max"], 0.5);
}

#[test]
fn rates_run_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 64.0);
    let out_dir = dir.path().join("out");
    let out = fastrate(&[
        "rates",
        "run",
        "-c",
        config.to_str().unwrap(),
        "--threads",
        "2",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["verdict"], "PASS");
    for f in ["raw.csv", "rates.csv", "rates.json", "rates.svg"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let raw = out_dir.join("raw.csv");
    let fit = fastrate(&["rates", "fit", "-i", raw.to_str().unwrap(), "--window", "3"]);
    assert_eq!(fit.status.code(), Some(0));
    let curve = stdout_json(&fit);
    let beta = curve["fit"]["beta_hat"].as_f64().unwrap();
    assert!((0.7..1.3).contains(&beta), "beta_hat = {beta}");

    let vacuous = fastrate(&[
        "rates", "fit", "-i", raw.to_str().unwrap(), "--r", "5", "--k", "1", "--d", "1",
    ]);
    assert_eq!(vacuous.status.code(), Some(3));
}

#[test]
fn vacuous_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 6.0);
    let out = fastrate(&[
        "rates",
        "run",
        "-c",
        config.to_str().unwrap(),
        "-o",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stdout_json(&out)["verdict"], "VACUOUS");
}

#[test]
fn slow_curve_fails() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let mut text = String::from("n,trial,seed,excess,excess_raw,excess_se,clipped,error\n");
    for n in [100, 1000, 10000] {
        for t in 0..5 {
            let e = 1.0 / (n as f64).powf(0.1) * (1.0 + t as f64 / 10.0);
            text += &format!("{n},{t},0,{e:.16e},{e:.16e},0.0,false,\n");
        }
    }
    std::fs::write(&raw, text).unwrap();
    let out = fastrate(&[
        "rates", "fit", "-i", raw.to_str().unwrap(), "--r", "100", "--k", "2", "--d", "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["theory"]["verdict"], "FAIL");
}

#[test]
fn bernstein_check_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("b.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "spec": {"family": "gaussian", "params": {"mean": 0.0, "std": 1.0}, "dim": 1},
            "k": 1, "rho": 10.0,
            "oracle": {"mode": "closed_form"},
            "distance_range": [0.01, 9.0], "distances": 40, "rays": 2
        })
        .to_string(),
    )
    .unwrap();
    let out = fastrate(&[
        "bernstein",
        "check",
        "-c",
        config.to_str().unwrap(),
        "-o",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("fit.json").exists());
    let probes = std::fs::read_to_string(dir.path().join("probes.csv")).unwrap();
    assert_eq!(probes.lines().count(), 81);
}

#[test]
fn net_build_reports_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    // ε = √2/2 with L = 4 and dk = 2 gives mesh δ = 0.5, so 4 values per axis
    let out = fastrate(&[
        "net",
        "build",
        "--rho",
        "1",
        "--d",
        "1",
        "--k",
        "2",
        "--epsilon",
        "0.7071067811865476",
        "--lipschitz",
        "4",
        "--c-entropy",
        "3",
        "--k-entropy",
        "10",
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["net"]["members"], 16);
    assert_eq!(v["entropy"]["holds"], true);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 * 2 * 8);
}

#[test]
fn errors_exit_one() {
    let out = fastrate(&["rates", "run", "-c", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/config.json"));
}
