use std::path::Path;
use std::process::{Command, Output};

fn crossflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crossflow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, controller: &str) {
    let cfg = format!(
        r#"{{
  "network": {{"file": "grid.json"}},
  "demand": {{"uniform": {{"veh_per_hour": 400}}}},
  "controller": "{controller}",
  "pedestrian_ratio": "3:5",
  "total_slots": 900,
  "train_slots": 600,
  "seed": 21
}}"#
    );
    std::fs::write(dir.join("exp.json"), cfg).unwrap();
}

#[test]
fn gen_grid_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = crossflow(dir.path(), &["gen-grid", "--rows", "2", "--cols", "3", "--out", "grid.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let net = crossflow::network::load_network(&std::fs::read_to_string(dir.path().join("grid.json")).unwrap()).unwrap();
    assert_eq!(net.intersections.len(), 6);

    write_config(dir.path(), "qlearn");
    let out = crossflow(dir.path(), &["run", "--config", "exp.json", "--controller", "dynamic", "--out", "r"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let slots = std::fs::read_to_string(dir.path().join("r_dynamic_slots.csv")).unwrap();
    assert!(slots.starts_with("slot,veh_queue,ped_queue,cum_veh_queue,cum_ped_queue\n"));
    assert_eq!(slots.lines().count(), 901);
    let summary = std::fs::read_to_string(dir.path().join("r_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);

    let again = crossflow(dir.path(), &["run", "--config", "exp.json", "--controller", "dynamic", "--out", "s"]);
    assert!(again.status.success());
    let repeat = std::fs::read_to_string(dir.path().join("s_dynamic_slots.csv")).unwrap();
    assert_eq!(slots, repeat);
}

#[test]
fn suite_writes_one_row_per_controller() {
    let dir = tempfile::tempdir().unwrap();
    assert!(crossflow(dir.path(), &["gen-grid", "--rows", "2", "--cols", "2", "--out", "grid.json"]).status.success());
    write_config(dir.path(), "qlearn");
    let out = crossflow(dir.path(), &["suite", "--config", "exp.json", "--out", "suite"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(dir.path().join("suite_summary.csv")).unwrap();
    let names: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["qlearn", "fixed", "dynamic4", "dynamic6", "dynamic8", "marl"]);
    assert!(dir.path().join("suite_cumulative.svg").exists());
}

#[test]
fn bad_input_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"network": {"file": "missing.json"}, "demand": {"uniform": {"veh_per_hour": 1}}, "seed": 1}"#).unwrap();
    let out = crossflow(dir.path(), &["run", "--config", "bad.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = crossflow(dir.path(), &["run", "--config", "bad.json", "--controller", "greedy"]);
    assert!(!out.status.success());
    let out = crossflow(dir.path(), &["gen-grid", "--rows", "0", "--cols", "2", "--out", "g.json"]);
    assert!(!out.status.success());
}
