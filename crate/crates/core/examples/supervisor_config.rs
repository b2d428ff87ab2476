//! Generate the unit configuration for one container and parse it back the
//! way the unit would at start-up.
//!
//! cargo run --example supervisor_config [container]

use std::path::Path;

use toskose::config::{complete_config, CompletionDefaults};
use toskose::packager::{enrich_model, generate_compose, generate_supervisor_config, BaseImages};
use toskose::tosca::parse_service_template;
use toskose::unit::load_unit_config_with;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let container = std::env::args().nth(1).unwrap_or_else(|| "maven".into());
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/thinking/csar/thinking.yaml");
    let template = parse_service_template(&std::fs::read_to_string(fixture)?)?;
    let config = complete_config(&Default::default(), &template, &CompletionDefaults::for_template(&template));
    let complete = config.to_complete().ok_or("incomplete configuration")?;
    let model = enrich_model(&template, &complete, &BaseImages::default());

    let doc = generate_supervisor_config(&model, &container)?;
    print!("{doc}");

    let compose = generate_compose(&model);
    let service = &compose.services[&container];
    let unit = load_unit_config_with(&doc, |k| service.env(k).map(str::to_owned))?;
    eprintln!("listens on port {}, {} programs:", unit.http.port, unit.programs.len());
    for p in unit.programs.values() {
        eprintln!("  {:<24} {}", p.name, p.command.join(" "));
    }
    Ok(())
}
