use std::path::Path;
use std::process::{Command, Output};

fn crsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crsg")).args(args).output().expect("binary runs")
}

fn generate(dir: &Path) -> String {
    let out = dir.join("s");
    let out = out.to_str().unwrap().to_owned();
    let o = crsg(&["gen-scenarios", "--seed", "4", "--count", "3", "--out", &out, "--sequence-length", "2", "--displacement-count", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generated_files_drive_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generate(tmp.path());
    let scene = format!("{dir}/scene_0000.json");

    let o = crsg(&["build-graph", &scene]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("8 carriers"));

    let o = crsg(&["build-graph", &scene, "--dump"]);
    let dump: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(dump.is_object());

    let o = crsg(&["query", &scene, "table"]);
    assert!(o.status.success());
    let hit: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(hit["object"].is_string());

    let o = crsg(&["run-episode", &format!("{dir}/scenario_0001.json"), "--variant", "only-carriers_Random"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("task ")).count(), 2);

    let report = tmp.path().join("r.jsonl");
    let o = crsg(&["run-suite", &dir, "--variants", "ours,no-update", "--out", report.to_str().unwrap()]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.iter().filter(|l| l["record"] == "episode").count(), 2 * 3 * 2);
    assert_eq!(lines.iter().filter(|l| l["record"] == "summary").count(), 2);
}

#[test]
fn exit_codes() {
    assert_eq!(crsg(&["build-graph", "/nonexistent/scene.json"]).status.code(), Some(1));
    assert_eq!(crsg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(crsg(&["run-suite", ".", "--variants", "bogus", "--out", "x"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("scene.json");
    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(crsg(&["build-graph", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(crsg(&["gen-scenarios", "--seed", "1", "--out", tmp.path().to_str().unwrap(), "--n-items", "0"]).status.code(), Some(1));
    assert_eq!(crsg(&["--help"]).status.code(), Some(0));
}

#[test]
fn llm_flag_without_endpoint_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = generate(tmp.path());
    let o = Command::new(env!("CARGO_BIN_EXE_crsg"))
        .args(["--llm", "build-graph", &format!("{dir}/scene_0000.json")])
        .env_remove("CRSG_LLM_ENDPOINT")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
