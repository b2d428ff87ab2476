//! Pack the bundled example application, read it back and print its topology.
//!
//! cargo run --example parse_csar [path/to/app.csar]

use std::path::{Path, PathBuf};

use toskose::tosca::{classify_nodes, pack_csar, parse_service_template, read_csar, validate_topology};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch = tempfile::tempdir()?;
    let csar = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let dest = scratch.path().join("thinking.csar");
            pack_csar(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/thinking/csar"), &dest)?;
            dest
        }
    };

    let archive = read_csar(&csar)?;
    println!("entry definitions: {}", archive.entry_definitions);
    let template = parse_service_template(&archive.read_entry_definitions()?)?;
    let report = validate_topology(&template);
    println!("validation: {}", if report.is_clean() { "clean".to_string() } else { report.to_string() });

    for node in template.nodes.values() {
        let ops: Vec<&str> = node.interface.names().collect();
        println!("{:<12} {:<10} {}", node.name, node.kind.to_string(), ops.join(" "));
    }
    let classes = classify_nodes(&template);
    for (container, hosted) in &classes.hosting {
        println!("{container} hosts {}", hosted.join(", "));
    }
    println!("standalone: {}", classes.standalone.join(", "));
    Ok(())
}
