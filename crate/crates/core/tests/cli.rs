//! End-to-end runs of the `pdesde` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdesde::cli::OUT_DIR_ENV;
use pdesde::config::ScenarioConfig;
use serde_json::Value;

fn pdesde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdesde")).args(args).env_remove(OUT_DIR_ENV).output().expect("binary runs")
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn kernels_writes_tables_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pdesde(&["kernels", "--preset", "fig1", "--nx", "100", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let kernels = std::fs::read_to_string(dir.path().join("kernels.csv")).unwrap();
    let mut lines = kernels.lines();
    assert_eq!(lines.next(), Some("x,y,K_uu,K_uv,K_vu,K_vv"));
    // lower triangle 0 <= y <= x on 101 nodes
    assert_eq!(lines.count(), 101 * 102 / 2);

    let gamma = std::fs::read_to_string(dir.path().join("gamma.csv")).unwrap();
    assert_eq!(gamma.lines().count(), 102);

    let s = read_json(&dir.path().join("kernels_summary.json"));
    assert_eq!(s["nx"], 100);
    assert!(s["max_differential_residual"].as_f64().unwrap() < 1e-2);
    assert!(s["max_algebraic_residual"].as_f64().unwrap() < 1e-8);
    // γ_α(0) = -1 on the reference system
    assert!((s["gamma_alpha_0"][0].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn check_passes_on_decoupled_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pdesde(&["check", "--preset", "decoupled", "--quick", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<Value> =
        stdout.lines().filter(|l| l.starts_with('{')).map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.len() >= 8);
    assert!(lines.iter().all(|l| l["pass"] == true));
    let s = read_json(&dir.path().join("check_summary.json"));
    assert_eq!(s["failed"], 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(pdesde(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pdesde(&["kernels", "--nx", "banana"]).status.code(), Some(2));
    assert_eq!(pdesde(&["kernels", "--preset", "nope"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"params": {}, "surprise": 1}"#).unwrap();
    let o = pdesde(&["kernels", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_dir_env_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pdesde"))
        .args(["simulate", "--preset", "decoupled", "--nx", "20", "--seed", "3"])
        .env(OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,X_1,v_in,v_bs,v_eff,beta0"));
    let s = read_json(&dir.path().join("simulate_summary.json"));
    assert_eq!(s["seed"], 3);
}

#[test]
fn simulate_is_reproducible() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let o = pdesde(&["simulate", "--preset", "fig1", "--nx", "40", "--seed", "11", "--out", out]);
        assert!(o.status.success());
        std::fs::read(dir.path().join("trajectory.csv")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn shipped_scenarios_match_presets() {
    for name in ["fig1", "decoupled"] {
        let path = repo_root().join("scenarios").join(format!("{name}.json"));
        let file = ScenarioConfig::load(&path).unwrap();
        assert_eq!(file, ScenarioConfig::preset(name).unwrap(), "{name}");
    }
}

/// Every key a preset serialises to must be declared by the schema.
#[test]
fn schema_covers_config_keys() {
    fn walk(value: &Value, schema: &Value, defs: &Value, at: &str) {
        let schema = resolve(schema, defs);
        if let Some(options) = schema.get("oneOf").and_then(Value::as_array) {
            let hit = options.iter().any(|o| {
                let o = resolve(o, defs);
                match (value, o.get("properties")) {
                    (Value::Object(m), Some(Value::Object(p))) => m.keys().all(|k| p.contains_key(k)),
                    _ => false,
                }
            });
            assert!(hit, "no schema alternative covers {at}");
            return;
        }
        match value {
            Value::Object(m) => {
                let props = schema["properties"].as_object().unwrap_or_else(|| panic!("{at} has no properties"));
                for (k, v) in m {
                    let sub = props.get(k).unwrap_or_else(|| panic!("{at}.{k} missing from schema"));
                    walk(v, sub, defs, &format!("{at}.{k}"));
                }
            }
            Value::Array(items) => {
                if let Some(sub) = schema.get("items") {
                    for (i, v) in items.iter().enumerate() {
                        walk(v, sub, defs, &format!("{at}[{i}]"));
                    }
                }
            }
            _ => {}
        }
    }
    fn resolve<'a>(s: &'a Value, defs: &'a Value) -> &'a Value {
        match s.get("$ref").and_then(Value::as_str) {
            Some(r) => &defs[r.trim_start_matches("#/$defs/")],
            None => s,
        }
    }

    let schema = read_json(&repo_root().join("schema/scenario.schema.json"));
    for name in ["fig1", "decoupled"] {
        let cfg: Value = serde_json::from_str(&ScenarioConfig::preset(name).unwrap().to_json().unwrap()).unwrap();
        walk(&cfg, &schema, &schema["$defs"], name);
    }
}
