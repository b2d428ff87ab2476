//! Fill in a partial configuration with defaults and print the result.
//!
//! cargo run --example complete_config

use std::path::Path;

use toskose::config::{complete_config, parse_config, validate_completed, CompletionDefaults};
use toskose::tosca::parse_service_template;

const PARTIAL: &str = "
nodes:
  maven:
    port: 9456
    docker:
      name: example/maven-toskosed
      tag: '1.0'
manager:
  mode: development
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/thinking/csar/thinking.yaml");
    let template = parse_service_template(&std::fs::read_to_string(fixture)?)?;
    let partial = parse_config(PARTIAL)?;
    let defaults = CompletionDefaults::for_template(&template).with_repository(Some("example".into()));
    let completed = complete_config(&partial, &template, &defaults);
    let report = validate_completed(&completed, &template);
    for d in &report.diagnostics {
        eprintln!("{d}");
    }
    print!("{}", completed.to_yaml());
    Ok(())
}
