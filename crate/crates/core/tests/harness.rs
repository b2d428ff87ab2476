mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use toskose::harness::{launch_local, DeploymentState, HarnessManifest, HarnessOptions, ServiceKind, STATE_FILE};
use toskose::packager::{run_pipeline, PipelineOptions};

fn artifacts(dir: &Path) -> PathBuf {
    let csar = thinking_csar(dir);
    let out = dir.join("out");
    let options = PipelineOptions { output_path: out.clone(), ..PipelineOptions::default() };
    run_pipeline(&csar, Some(&fixture("thinking/toskose.yml")), &options).unwrap();
    out
}

fn options(sandbox: &Path, manifest: &str) -> HarnessOptions {
    let mut o = HarnessOptions::new(TOSKOSE);
    o.sandbox_root = Some(sandbox.to_path_buf());
    o.manifest = HarnessManifest::from_yaml(manifest).unwrap();
    o
}

fn thinking_manifest() -> String {
    fs::read_to_string(fixture("thinking/harness.yml")).unwrap()
}

fn get_nodes(endpoint: &str) -> reqwest::StatusCode {
    let config = yaml_file(&fixture("thinking/toskose.yml"));
    let m = &config["manager"];
    reqwest::blocking::Client::new()
        .get(format!("http://{endpoint}/api/v1/node"))
        .basic_auth(m["user"].as_str().unwrap(), m["password"].as_str())
        .send()
        .unwrap()
        .status()
}

#[test]
fn launches_every_service_and_tears_down_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = artifacts(dir.path());
    let root = dir.path().join("sandbox");
    let mut d = launch_local(&out, &options(&root, &thinking_manifest())).unwrap();

    let kinds: Vec<(&str, ServiceKind)> = d.state.services.iter().map(|s| (s.name.as_str(), s.kind)).collect();
    assert_eq!(
        kinds,
        [
            ("maven", ServiceKind::Unit),
            ("node", ServiceKind::Unit),
            ("mongodb", ServiceKind::Stub),
            ("toskose-manager", ServiceKind::Manager)
        ]
    );
    let pids: Vec<u32> = d.state.services.iter().map(|s| s.pid).collect();
    assert!(pids.iter().all(|p| process_alive(*p)));
    for alias in ["maven", "node", "mongodb", "toskose-manager"] {
        assert!(d.resolve_alias(alias).unwrap().starts_with("127.0.0.1:"));
    }
    assert!(d.resolve_alias("elsewhere").is_err());
    assert_eq!(get_nodes(&d.manager_endpoint().unwrap()), reqwest::StatusCode::OK);

    // Unit configs point into the sandbox, not the container layout.
    let conf = fs::read_to_string(d.service("maven").unwrap().sandbox.join("supervisord.conf")).unwrap();
    assert!(!conf.contains("/toskose/"));

    d.teardown();
    assert!(pids.iter().all(|p| !process_alive(*p)));
    assert!(!root.exists());
    d.teardown();
}

#[test]
fn two_deployments_of_the_same_artifacts_coexist() {
    let dir = tempfile::tempdir().unwrap();
    let out = artifacts(dir.path());
    let mut a = launch_local(&out, &options(&dir.path().join("a"), &thinking_manifest())).unwrap();
    let mut b = launch_local(&out, &options(&dir.path().join("b"), &thinking_manifest())).unwrap();
    assert_ne!(a.manager_endpoint(), b.manager_endpoint());
    assert_eq!(get_nodes(&a.manager_endpoint().unwrap()), reqwest::StatusCode::OK);
    assert_eq!(get_nodes(&b.manager_endpoint().unwrap()), reqwest::StatusCode::OK);
    a.teardown();
    b.teardown();
}

#[test]
fn a_stub_that_dies_fails_the_launch_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let out = artifacts(dir.path());
    let root = dir.path().join("sandbox");
    let err = launch_local(&out, &options(&root, "stubs:\n  mongodb:\n    command: /bin/false\n")).err().unwrap();
    assert!(err.to_string().contains("mongodb"), "{err}");
    assert!(!root.exists());
}

#[test]
fn cli_up_and_down() {
    let dir = tempfile::tempdir().unwrap();
    let out = artifacts(dir.path());
    fs::copy(fixture("thinking/harness.yml"), out.join("harness.yml")).unwrap();
    let up = Command::new(TOSKOSE).args(["harness", "up"]).arg(&out).output().unwrap();
    assert!(up.status.success(), "{}", String::from_utf8_lossy(&up.stderr));
    let state = DeploymentState::load(&out.join(STATE_FILE)).unwrap();
    assert_eq!(state.services.len(), 4);
    assert!(state.services.iter().all(|s| process_alive(s.pid)));

    let down = Command::new(TOSKOSE).args(["harness", "down"]).arg(&out).output().unwrap();
    assert!(down.status.success());
    assert!(state.services.iter().all(|s| !process_alive(s.pid)));
    assert!(!out.join(STATE_FILE).exists());
    assert!(!state.root.exists());
}
