use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/logistics.json")
}

fn fabric(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fabric")).args(args).output().unwrap()
}

fn run_to(dir: &Path, name: &str, features: &str) -> PathBuf {
    let out = dir.join(name);
    let s = scenario();
    let o = fabric(&["run", "--scenario", s.to_str().unwrap(), "--features", features, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn unknown_feature_is_a_config_error() {
    let s = scenario();
    let o = fabric(&["run", "--scenario", s.to_str().unwrap(), "--features", "bogus_flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_flag"));
}

#[test]
fn missing_scenario_is_a_config_error() {
    let o = fabric(&["run", "--scenario", "/no/such/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_fixture_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("logistics.json");
    std::fs::copy(scenario(), &copy).unwrap();
    let o = fabric(&["run", "--scenario", copy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn comparing_a_report_with_itself_gives_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(dir.path(), "a.json", "all");
    let before = std::fs::read(&a).unwrap();
    let o = fabric(&["compare", a.to_str().unwrap(), a.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let cmp: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(cmp["deltas"].as_array().unwrap().iter().all(|d| d["delta"] == 0.0));
    assert_eq!(std::fs::read(&a).unwrap(), before);
}

#[test]
fn features_lower_backend_queries() {
    let dir = tempfile::tempdir().unwrap();
    let off = run_to(dir.path(), "off.json", "none");
    let on = run_to(dir.path(), "on.json", "all");
    let o = fabric(&["compare", off.to_str().unwrap(), on.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let cmp: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let queries = cmp["deltas"].as_array().unwrap().iter().find(|d| d["metric"] == "backend_queries").unwrap();
    assert!(queries["delta"].as_f64().unwrap() < 0.0);
}

#[test]
fn divergent_decisions_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(dir.path(), "a.json", "all");
    let mut report: serde_json::Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    report["final_decision"]["new_route"] = "Jakarta >> Destination".into();
    let b = dir.path().join("b.json");
    std::fs::write(&b, serde_json::to_string(&report).unwrap()).unwrap();
    let o = fabric(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corrupted_report_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(dir.path(), "a.json", "all");
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"backend_queries\": ").unwrap();
    let o = fabric(&["compare", a.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_changes_rendering_only() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(dir.path(), "a.json", "all");
    let json = fabric(&["replay", a.to_str().unwrap(), "--format", "json"]);
    assert_eq!(json.stdout, std::fs::read(&a).unwrap());
    let csv = String::from_utf8(fabric(&["replay", a.to_str().unwrap(), "--format", "csv"]).stdout).unwrap();
    let report: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let values: Vec<&str> = csv.lines().nth(1).unwrap().splitn(10, ',').collect();
    assert_eq!(values[0], report["backend_queries"].to_string());
    assert_eq!(values[5], report["total_latency"].to_string());
    let table = String::from_utf8(fabric(&["replay", a.to_str().unwrap()]).stdout).unwrap();
    assert!(table.contains("backend_queries"));
}
