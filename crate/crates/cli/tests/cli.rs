use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lowrank_cli::output::read_csv;
use serde_json::Value;

fn lowrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowrank")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"{
  "target": {"preset": "M1"},
  "adapter": {"r": 2, "alpha": 2, "eta": 0.01, "steps": 300, "record_stride": 25,
              "inits": [{"kind": "gaussian"}, {"kind": "hrp"}]},
  "hrp": {"hrp_rank": 6, "hrp_steps": 20},
  "seeds": {"master_seed": 7, "count": 2}
}"#;

#[test]
fn factorize_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (o1, o2) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&o1, &o2] {
        let res = lowrank(&["factorize", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for name in ["gaussian_rsi_seed000.csv", "gaussian_rsi_seed001.csv", "hrp_seed000.csv", "hrp_seed001.csv"] {
        let a = fs::read(o1.join(name)).unwrap();
        assert_eq!(a, fs::read(o2.join(name)).unwrap(), "{name}");
        assert!(a.starts_with(b"step,loss,loss_gap\n"));
    }
    let summary = read_json(&o1.join("summary.json"));
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["master_seed"], 7);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);
    let rows = read_csv(&o1.join("hrp_seed000.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), (0..=300).step_by(25).collect::<Vec<_>>());
}

#[test]
fn zero_steps_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"adapter": {"steps": 0, "inits": [{"kind": "orthogonal"}]}}"#);
    let out = dir.path().join("out");
    let res = lowrank(&["factorize", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let text = fs::read_to_string(out.join("orthogonal_rsi_seed000.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn target_svd_reaches_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"adapter": {"variant": "asymmetric", "inits": [{"kind": "target_svd"}]}}"#);
    let out = dir.path().join("out");
    assert!(lowrank(&["factorize", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let rows = read_csv(&out.join("target_svd_rsi_seed000.csv")).unwrap();
    assert!(rows.last().unwrap().loss_gap <= 1e-3);
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        r#"{"adapter": {"rank": 2}}"#,
        r#"{"adapter": {"eta": -0.1}}"#,
        r#"{"target": {"preset": "M7"}}"#,
        r#"{"seeds": {"count": 0}}"#,
        "not json",
    ] {
        let cfg = write_config(dir.path(), bad);
        let res = lowrank(&["factorize", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8_lossy(&res.stderr).contains("invalid config"), "{bad}");
    }
    assert_eq!(lowrank(&["verify", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(lowrank(&["factorize", "--config", "/no/such/file.json"]).status.code(), Some(2));
}

#[test]
fn divergence_is_recorded_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"adapter": {"eta": 5.0, "steps": 200, "inits": [{"kind": "gaussian", "sigma": 3.0}]}}"#,
    );
    let out = dir.path().join("out");
    let res = lowrank(&["factorize", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["runs"][0]["status"], "diverged");
}

#[test]
fn trap_suite_reports_only_trap_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let res = lowrank(&["verify", "--suite", "trap", "--seeds", "5", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stdout));
    let report = read_json(&out.join("verify.json"));
    let checks = report["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 2);
    assert!(checks.iter().all(|c| c["name"].as_str().unwrap().starts_with("trap/")));
    assert_eq!(report["suite"], "trap");
    for key in ["name", "pass", "measured", "expected", "tolerance", "n_seeds"] {
        assert!(checks[0].get(key).is_some(), "{key}");
    }
}

#[test]
fn tampered_bound_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"verify": {"lower_bound": [{"bound_scale": 0.5, "n_seeds": 20}], "frozen_init": []}}"#,
    );
    let out = dir.path().join("v");
    let res = lowrank(&["verify", "--suite", "lower_bound", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("FAIL lower_bound/M1"));
    assert_eq!(read_json(&out.join("verify.json"))["all_pass"], false);
}

#[test]
fn nn_reports_every_initializer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"nn": {"a": 12, "b": 10, "rank_star": 2, "n": 128, "r": 2, "alpha": 2, "steps": 60, "batch_size": 16,
                   "record_stride": 20, "hrp": {"hrp_rank": 6, "hrp_steps": 10, "hrp_lr": 0.5, "hrp_batch": 16}},
            "seeds": {"count": 3}}"#,
    );
    let out = dir.path().join("nn");
    let res = lowrank(&["nn", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("nn.json"));
    let results = report["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    for r in results {
        assert!(r["mean"].is_f64() && r["stderr"].is_f64());
        assert_eq!(r["n"], 3);
    }
    assert!(out.join("hrp_seed002.csv").exists());
}

#[test]
fn figure1_writes_curves_and_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    let res = lowrank(&["figure1", "--seeds", "4", "--out", out.to_str().unwrap()]);
    assert!(res.status.code().is_some());
    for panel in ["classic", "asymmetric"] {
        let svg = fs::read_to_string(out.join(format!("{panel}.svg"))).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 4);
        for init in ["gaussian", "orthogonal", "hrp", "target_svd"] {
            assert!(out.join(format!("{panel}_{init}.csv")).exists());
        }
    }
    let report = read_json(&out.join("figure1.json"));
    assert_eq!(report["settings"]["n_seeds"], 4);
    assert_eq!(report["curves"].as_array().unwrap().len(), 8);
}
