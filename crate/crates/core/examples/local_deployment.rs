//! Package the bundled application, run it as local processes and walk one
//! component through its lifecycle via the manager.
//!
//! cargo build && cargo run --example local_deployment [path/to/toskose]

use std::path::{Path, PathBuf};

use toskose::harness::{launch_local, HarnessManifest, HarnessOptions};
use toskose::packager::{run_pipeline, PipelineOptions};
use toskose::tosca::pack_csar;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let toskose = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("../../target/debug/toskose"));
    let fixtures = root.join("fixtures/thinking");
    let scratch = tempfile::tempdir()?;
    let csar = scratch.path().join("thinking.csar");
    pack_csar(fixtures.join("csar"), &csar)?;
    let out = scratch.path().join("out");
    let config_path = fixtures.join("toskose.yml");
    let result =
        run_pipeline(&csar, Some(&config_path), &PipelineOptions { output_path: out.clone(), ..Default::default() })?;

    let mut options = HarnessOptions::new(toskose);
    options.manifest = HarnessManifest::from_yaml(&std::fs::read_to_string(fixtures.join("harness.yml"))?)?;
    let mut deployment = launch_local(&out, &options)?;
    for s in &deployment.state.services {
        println!("{:<16} pid {:<7} 127.0.0.1:{}", s.name, s.pid, s.port);
    }

    let manager = result.config.manager.as_ref().ok_or("no manager settings")?;
    let (user, password) = (manager.user.clone().unwrap_or_default(), manager.password.clone());
    let base = format!("http://{}/api/v1/node/node/gui", deployment.manager_endpoint().ok_or("no manager")?);
    let http = reqwest::blocking::Client::new();
    for op in ["create", "configure", "start", "stop"] {
        let resp = http.post(format!("{base}/{op}")).basic_auth(&user, password.as_deref()).send()?;
        println!("{op:<10} {} {}", resp.status(), resp.text()?);
    }
    deployment.teardown();
    Ok(())
}
