use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use opcwalk_cli::{validate_config, RunManifest, RunStatus, MANIFEST_FILE};
use proptest::prelude::*;
use serde_json::{json, Value};

fn opcwalk(args: &[&str], config: &Value, dir: &Path) -> Output {
    let path = dir.join("config.json");
    fs::write(&path, config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_opcwalk")).args(args).arg("--config").arg(&path).output().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&o.stderr)))
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap()
}

#[test]
fn config_errors_exit_2_with_pointers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = json!({"command": "drift", "lattice": {"d": 1, "p": 1.5}, "replicas": 0, "weight_spec": {"kind": "nope"}});
    let o = opcwalk(&["drift", "--out", out.to_str().unwrap()], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "config");
    let pointers: Vec<&str> = err["errors"].as_array().unwrap().iter().map(|e| e["pointer"].as_str().unwrap()).collect();
    assert_eq!(pointers, ["/lattice/p", "/replicas", "/weight_spec/kind"]);
    assert!(!out.join(MANIFEST_FILE).exists());
}

#[test]
fn unreadable_inputs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = Command::new(env!("CARGO_BIN_EXE_opcwalk")).args(["drift", "--config", "/nonexistent/c.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(stderr_json(&missing)["error"], "config");

    let path = tmp.path().join("broken.json");
    fs::write(&path, "{\"command\": ").unwrap();
    let broken = Command::new(env!("CARGO_BIN_EXE_opcwalk")).args(["drift", "--out", "x", "--config"]).arg(&path).output().unwrap();
    assert_eq!(broken.status.code(), Some(2));

    let bad_command = Command::new(env!("CARGO_BIN_EXE_opcwalk")).args(["walk-fast", "--config", "c.json"]).output().unwrap();
    assert_eq!(bad_command.status.code(), Some(2));
    assert_eq!(stderr_json(&bad_command)["error"], "config");
}

#[test]
fn command_argument_must_match_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"command": "tail", "lattice": {"d": 1, "p": 0.8}});
    let o = opcwalk(&["drift", "--out", tmp.path().join("o").to_str().unwrap()], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["errors"][0]["pointer"], "/command");
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    // The start is closed at time 1 on both sides: not in the backbone.
    let cfg = json!({"command": "oracle-check", "lattice": {"d": 1, "p": 0.8}, "steps": 2,
        "oracle": {"runs": 10, "windows": [{"t_end": 3, "lo": [-2], "hi": [2], "closed": [{"x": [-1], "n": 1}, {"x": [1], "n": 1}]}]}});
    let o = opcwalk(&["oracle-check", "--out", tmp.path().join("o").to_str().unwrap()], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "runtime");
    assert!(err["message"].as_str().unwrap().contains("backbone"));
}

#[test]
fn budget_exhaustion_is_partial_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = json!({"command": "drift", "lattice": {"d": 1, "p": 0.8, "horizon": 100}, "replicas": 4, "budget": 300,
        "drift": {"regenerations": 200}});
    let o = opcwalk(&["drift", "--out", out.to_str().unwrap()], &cfg, tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["status"], "partial");
    let m = manifest(&out);
    assert_eq!(m.status, RunStatus::Partial);
    assert!(m.warnings.iter().any(|w| w.contains("budget")));
}

#[test]
fn manifest_describes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = json!({"command": "drift", "lattice": {"d": 1, "p": 0.8, "horizon": 100}, "replicas": 3, "master_seed": 5,
        "drift": {"regenerations": 40}});
    let o = opcwalk(&["drift", "--out", out.to_str().unwrap(), "--seed", "11", "--threads", "2"], &cfg, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m.software, "opcwalk-cli");
    assert_eq!(m.command, "drift");
    assert_eq!(m.status, RunStatus::Ok);
    assert_eq!(m.threads, 2);
    assert_eq!(m.config.master_seed, 11);
    assert_eq!(m.config.output_dir.as_deref(), Some(out.as_path()));
    let labels: Vec<&str> = m.seed_derivations.iter().map(|s| s.label.as_str()).collect();
    assert_eq!(labels, ["drift-env", "drift-walk"]);
    // The echoed config is itself a valid config.
    assert_eq!(validate_config(&serde_json::to_string(&m.config).unwrap()).unwrap(), m.config);
    for f in &m.outputs {
        let bytes = fs::read(out.join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes, "{}", f.path);
    }
    let inc = m.outputs.iter().find(|f| f.path == "increments.csv").unwrap();
    let text = fs::read_to_string(out.join("increments.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("replica,index,tau,y_0"));
    assert_eq!(inc.rows, Some(text.lines().count() - 1));
    assert_eq!(inc.rows, Some(120));
}

#[test]
fn seed_override_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"command": "tail", "lattice": {"d": 1, "p": 0.8, "horizon": 100}, "tail": {"samples": 200}});
    let run = |seed: &str, name: &str| {
        let out = tmp.path().join(name);
        let o = opcwalk(&["tail", "--out", out.to_str().unwrap(), "--seed", seed], &cfg, tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("tail_t1.csv")).unwrap()
    };
    let (a, b, c) = (run("1", "a"), run("1", "b"), run("2", "c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn every_command_runs_small() {
    let tmp = tempfile::tempdir().unwrap();
    let window = json!({"t_end": 4, "lo": [-3], "hi": [3], "closed": [{"x": [1], "n": 2}], "weights": [[{"x": [-1], "n": 1}, 3]]});
    let cases = [
        json!({"command": "drift", "lattice": {"d": 1, "p": 1.0}, "steps": 100, "replicas": 3}),
        json!({"command": "berger", "lattice": {"d": 1, "p": 1.0}, "weight_spec": {"kind": "berger"}, "steps": 900, "replicas": 2}),
        json!({"command": "clt", "lattice": {"d": 1, "p": 0.8, "horizon": 100}, "steps": 50, "replicas": 120, "clt": {"drift_increments": 64}}),
        json!({"command": "quenched-clt", "lattice": {"d": 1, "p": 0.8, "horizon": 100}, "steps": 50, "replicas": 100, "environments": 2,
               "clt": {"drift_increments": 64}}),
        json!({"command": "tail", "lattice": {"d": 1, "p": 0.8, "horizon": 100}, "tail": {"samples": 100, "pair_samples": 100, "s2m_sites": 500}}),
        json!({"command": "mixing", "lattice": {"d": 1, "p": 1.0}, "weight_spec": {"kind": "iid", "a": 1.0, "b": 2.0},
               "mixing": {"mode": "phi", "axis": "space", "gaps": [1, 3], "samples": 500, "bootstrap_resamples": 100, "confidence": 0.95}}),
        json!({"command": "oracle-check", "lattice": {"d": 1, "p": 0.8}, "steps": 2, "oracle": {"runs": 500, "windows": [window]}}),
        json!({"command": "pair-tv", "lattice": {"d": 2, "p": 0.8}, "pair_tv": {"separations": [0, 8], "pairs": 1000,
               "summary": {"kind": "fixed_block", "length": 1, "bin": 1}, "bootstrap_resamples": 50}}),
        json!({"command": "annulus", "lattice": {"d": 2, "p": 0.8}, "budget": 20000,
               "annulus": {"r1": 2, "r2": 6, "radii": [4], "pairs": 40, "skeleton": "every_step"}}),
    ];
    for cfg in cases {
        let command = cfg["command"].as_str().unwrap();
        let out = tmp.path().join(command);
        let o = opcwalk(&[command, "--out", out.to_str().unwrap()], &cfg, tmp.path());
        assert!(o.status.success(), "{command}: {}", String::from_utf8_lossy(&o.stderr));
        let m = manifest(&out);
        assert!(!m.outputs.is_empty(), "{command}");
        for f in m.outputs.iter().filter(|f| f.path.ends_with(".csv")) {
            let mut r = csv::Reader::from_path(out.join(&f.path)).unwrap();
            let width = r.headers().unwrap().len();
            let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
            assert_eq!(Some(rows.len()), f.rows, "{command}/{}", f.path);
            assert!(rows.iter().all(|row| row.len() == width), "{command}/{}", f.path);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p_is_accepted_exactly_on_the_unit_interval(p in -0.5f64..1.5) {
        let raw = json!({"command": "tail", "lattice": {"d": 1, "p": p}, "output_dir": "o"}).to_string();
        match validate_config(&raw) {
            Ok(_) => prop_assert!(p > 0.0 && p < 1.0),
            Err(errs) => prop_assert!(p <= 0.0 || p >= 1.0, "{:?}", errs),
        }
    }

    #[test]
    fn range_errors_point_at_their_fields(d in 0i64..8, m in -2i64..3, replicas in -2i64..3) {
        let raw = json!({"command": "drift", "lattice": {"d": d, "p": 0.7}, "m": m, "replicas": replicas, "output_dir": "o"}).to_string();
        let pointers: Vec<String> = validate_config(&raw).err().unwrap_or_default().into_iter().map(|e| e.pointer).collect();
        prop_assert_eq!(pointers.contains(&"/lattice/d".to_string()), !(1..=4).contains(&d));
        prop_assert_eq!(pointers.contains(&"/m".to_string()), m < 1);
        prop_assert_eq!(pointers.contains(&"/replicas".to_string()), replicas < 1);
    }
}
