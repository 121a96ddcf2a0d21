use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn twinforge(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinforge"))
        .args(args)
        .arg("--out")
        .arg(out)
        .current_dir(workspace())
        .env_remove("SOURCE_DATE_EPOCH")
        .env("TWINFORGE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinforge(&["frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinforge(&["design", "--config", "no/such/config.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/config.json"), "{}", stderr(&o));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"diameters": [1, 2, 3]}"#).unwrap();
    let o = twinforge(&["sweep", "--config", bad.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("diameters"), "{}", stderr(&o));
}

#[test]
fn domain_failure_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("graph.json");
    std::fs::write(
        &graph,
        r#"{"name": "cell-9", "nodes": [{"node_id": "pump", "name": "Pumpe-Z9"}], "edges": []}"#,
    )
    .unwrap();
    let cfg = dir.path().join("create.json");
    std::fs::write(&cfg, r#"{"graph": "graph.json"}"#).unwrap();
    let o = twinforge(&["create", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("Pumpe-Z9"), "{}", stderr(&o));
}

#[test]
fn adapt_on_the_leakage_scenario_activates_depth_four() {
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(threads);
        let o = twinforge(
            &["adapt", "--config", "config/leakage_scenario.json", "--threads", threads],
            &out,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(out.join("adapt_result.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["status"], "adapted");
        assert_eq!(v["active"]["configuration"]["depth"], 4);
        let d_leak = v["active"]["configuration"]["parameters"]["d_leak"].as_f64().unwrap();
        assert!((d_leak - 0.8).abs() < 0.08, "fitted leak {d_leak}");
        let m = manifest(&out);
        assert_eq!(m["subcommand"], "adapt");
        assert_eq!(m["seed"], 7);
        results.push(text);
    }
    assert_eq!(results[0], results[1]);
}

#[test]
fn bench_writes_one_row_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinforge(
        &["bench", "--depths", "1,2,3,4", "--runs", "2", "--horizon", "1.6"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("depth,model_id,runs,median_s,mean_s,min_s,effort"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1).to_string());
        assert_eq!(r[2], "2");
        assert!(r[3].parse::<f64>().unwrap() > 0.0);
    }
    assert_eq!(manifest(dir.path())["outputs"], serde_json::json!(["bench.csv"]));
}

#[test]
fn shipped_package_example_matches_create() {
    let dir = tempfile::tempdir().unwrap();
    let o = twinforge(&["create", "--config", "config/create.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let made = std::fs::read_to_string(dir.path().join("twin_package.json")).unwrap();
    let shipped = std::fs::read_to_string(workspace().join("docs/examples/twin_package.json")).unwrap();
    assert_eq!(made, shipped);
}

#[test]
fn simulate_runs_a_package_and_emulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    let pkg = workspace().join("docs/examples/twin_package.json");
    std::fs::write(
        &cfg,
        serde_json::json!({"package": pkg, "depths": [3, 4], "cycles": 2}).to_string(),
    )
    .unwrap();
    let out = dir.path().join("sim");
    let o = twinforge(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("trace_d3.csv").is_file());
    assert!(out.join("trace_d4.csv").is_file());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("controller.json")).unwrap()).unwrap();
    assert_eq!(report["cell-1.gripper.d4"]["verdict"], "pass");

    let runs: Vec<Vec<u8>> = ["e1", "e2"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = twinforge(&["emulate", "--seed", "11", "--dt", "2e-4"], &out);
            assert!(o.status.success(), "{}", stderr(&o));
            let m = manifest(&out);
            assert_eq!(m["seed"], 11);
            assert_eq!(m["dt"], 2e-4);
            std::fs::read(out.join("measured.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}
