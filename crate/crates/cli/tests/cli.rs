use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochex"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_json(command: &str, scenario: &Path, extra: &[&str]) -> Value {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let mut args = vec![command, "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap()
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn envelope_carries_hash_and_version() {
    let v = run_json("oracle", &scenario("quadratic"), &[]);
    assert_eq!(v["tool"], "stochex");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["scenario"], "quadratic");
    let hash = v["scenario_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    assert!((v["result"]["min"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["result"]["max"].as_f64().unwrap() - 1.25).abs() < 1e-12);
}

#[test]
fn estimate_on_constant_process() {
    let v = run_json("estimate", &scenario("constant"), &["--k", "200"]);
    let est = &v["result"]["estimate"];
    let (smax, smin) = (est["smax"].as_f64().unwrap(), est["smin"].as_f64().unwrap());
    assert!((smax - 0.7).abs() < 1e-9 && (smin - 0.7).abs() < 1e-9);
    assert_eq!(v["result"]["verdict"]["no_extrema"], false);
    assert_eq!(v["result"]["verdict"]["converged"], true);
}

#[test]
fn asym_on_fresnel() {
    let v = run_json("asym", &scenario("fresnel"), &["--k", "400"]);
    let row = &v["result"]["theorem1"]["rows"][0];
    assert_eq!(row["k"], 400.0);
    assert!(row["relative_error"].as_f64().unwrap() <= 0.02);
    let q = row["quadrature"].as_array().unwrap();
    assert!((q[0].as_f64().unwrap() - 0.06267).abs() < 0.02 * 0.0886);
}

#[test]
fn asym_reports_theorem2_rows_for_box_models() {
    let v = run_json("asym", &scenario("theorem2"), &["--k", "300"]);
    let t2 = &v["result"]["theorem2"];
    assert_eq!(t2["report"]["signature"], 2);
    assert!(t2["rows"][0]["relative_error"].as_f64().unwrap() < 0.1);
}

#[test]
fn phases_table() {
    let v = run_json("phases", &scenario("cubic"), &[]);
    let points = v["result"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!(points[0]["order"], 3);
    let v = run_json("phases", &scenario("theorem2"), &[]);
    assert!((v["result"]["joint"]["omega_star"][0].as_f64().unwrap() - 0.4).abs() < 1e-8);
}

#[test]
fn integral_at_zero_frequency_is_the_mass() {
    let v = run_json("integral", &scenario("quadratic"), &["--k", "0"]);
    assert!((v["result"]["value"][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["result"]["value"][1].as_f64().unwrap(), 0.0);
}

#[test]
fn trace_csv_columns_and_final_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let path = scenario("theorem2");
    let o = run(&["trace", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--k", "400"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "lambda,re_J,im_J,abs_J,theta_unwrapped,E_of_lambda");
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(last[0], 400.0);
    assert!((last[5] - 1.0).abs() < 2e-2, "{}", last[5]);
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario("discrete");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        for command in ["estimate", "trace"] {
            let out = dir.path().join(format!("{command}{i}"));
            let o = run(&[
                command,
                "--scenario",
                path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--k",
                "300",
                "--threads",
                threads,
            ]);
            assert!(o.status.success());
            outputs.push(std::fs::read(out).unwrap());
        }
    }
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[1], outputs[3]);
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let cases = [
        "{\"name\": \"x\"}",
        "not json",
        r#"{"name": "x", "process": {"formula": "t+w2", "interval": [0, 1], "omega_dim": 1},
            "bump": {"epsilon": 0.1}, "omega": {"kind": "box", "bounds": [[0, 1]]}}"#,
        r#"{"name": "x", "process": {"formula": "t-0.5", "interval": [0, 1]}, "bump": {"epsilon": 0.1}}"#,
        r#"{"name": "x", "process": {"formula": "t", "interval": [0, 1]}, "bump": {"epsilon": 0}}"#,
        r#"{"name": "x", "process": {"formula": "t", "interval": [0, 1]}, "bump": {"epsilon": 0.1},
            "k": {"k_max": -1}}"#,
        r#"{"name": "x", "process": {"formula": "t+w1", "interval": [0, 1], "omega_dim": 1},
            "bump": {"epsilon": 0.1}, "omega": {"kind": "box", "bounds": [[0, 1]], "density": "3"}}"#,
        r#"{"name": "x", "process": {"formula": "t", "interval": [0, 1]}, "bump": {"epsilon": 0.1},
            "unexpected": 1}"#,
    ];
    for body in cases {
        let path = write_scenario(dir.path(), body);
        let o = run(&["estimate", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    let o = run(&["estimate", "--scenario", "/nonexistent.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn winding_ambiguity_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");
    let path = write_scenario(
        dir.path(),
        r#"{"name": "two-atoms", "process": {"formula": "w1", "interval": [0, 1], "omega_dim": 1},
            "bump": {"epsilon": 0.1},
            "omega": {"kind": "discrete", "atoms": [{"point": [1], "weight": 0.5}, {"point": [2], "weight": 0.5}]},
            "k": {"k_max": 20}}"#,
    );
    let o = run(&["estimate", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("winding ambiguous"));
    assert!(!out.exists());
}
