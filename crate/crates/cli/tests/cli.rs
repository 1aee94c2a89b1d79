use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crypsgd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn crypsgd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let out = run(&["init-config"]);
    assert!(out.status.success());
    let mut v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["iterations"] = 40.into();
    v["trials"] = 2.into();
    edit(&mut v);
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_conditions_and_strict_fails_on_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", |_| {});
    let o = run(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("VIOLATED"));
    let o = run(&["validate", "--config", s(&cfg), "--strict"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", |v| v["delta"] = (-1.0).into());
    assert_eq!(run(&["validate", "--config", s(&cfg)]).status.code(), Some(1));
    let cfg = write_config(dir.path(), "u.json", |v| v["bogus"] = 1.into());
    assert_eq!(run(&["run", "--config", s(&cfg), "--out", s(dir.path())]).status.code(), Some(1));
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["spectrum", "--config", s(&missing)]).status.code(), Some(1));
}

#[test]
fn state_clamp_abort_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", |v| v["state_clamp"] = 2.into());
    let o = run(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("o/proposed.csv").exists());
}

#[test]
fn run_writes_csv_and_proposed_attack_needs_extras() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", |_| {});
    let t = dir.path().join("t.jsonl");
    let o = run(&["run", "--config", s(&cfg), "--out", s(dir.path()), "--transcript", s(&t)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("proposed.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "k,mean_mse,var_mse,mean_consensus,mean_xi_sq");
    assert_eq!(lines.len(), 1 + 5);

    let o = run(&["attack", "--transcript", s(&t), "--mode", "proposed"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["outcome"], "ciphertext_only");

    let o = run(&["attack", "--transcript", s(&t), "--mode", "proposed", "--extras", "plaintexts"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["outcome"], "insufficient");

    let truth = dir.path().join("t.jsonl.truth.json");
    let o = run(&[
        "attack", "--transcript", s(&t), "--mode", "proposed", "--extras", "plaintexts,weights,gamma", "--truth",
        s(&truth),
    ]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["outcome"], "recovered");
    for e in v["product_per_agent_max_error"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn baseline_attack_recovers_gradients() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.json", |v| v["algorithm"] = "baseline".into());
    let t = dir.path().join("b.jsonl");
    assert!(run(&["run", "--config", s(&cfg), "--out", s(dir.path()), "--transcript", s(&t)]).status.success());
    let truth = dir.path().join("b.jsonl.truth.json");
    let o = run(&["attack", "--transcript", s(&t), "--mode", "baseline", "--truth", s(&truth)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["iterations"], 40);
    for e in v["per_agent_max_error"].as_array().unwrap() {
        assert!(e.as_f64().unwrap() < 1e-9);
    }
}

#[test]
fn spectrum_prints_matching_contraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", |_| {});
    let o = run(&["spectrum", "--config", s(&cfg)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("mu = ") && text.contains("gamma_max = "));
    for line in text.lines().filter(|l| l.contains("diff = ")) {
        let d: f64 = line.rsplit("diff = ").next().unwrap().trim().parse().unwrap();
        assert!(d < 1e-12, "{line}");
    }
}

#[test]
fn attack_rejects_unknown_extra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", |v| v["iterations"] = 3.into());
    let t = dir.path().join("t.jsonl");
    assert!(run(&["run", "--config", s(&cfg), "--out", s(dir.path()), "--transcript", s(&t)]).status.success());
    let o = run(&["attack", "--transcript", s(&t), "--mode", "proposed", "--extras", "keys"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bundled_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["proposed.json", "no_attenuation.json", "baseline.json"] {
        let o = run(&["validate", "--config", s(&root.join(name))]);
        assert_eq!(o.status.code(), Some(0), "{name}");
    }
}
