//! Run the packaging pipeline without a container engine and print the
//! generated compose file.
//!
//! cargo run --example generate_compose [output_dir]

use std::path::{Path, PathBuf};

use toskose::packager::{run_pipeline, PipelineOptions};
use toskose::tosca::pack_csar;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/thinking");
    let scratch = tempfile::tempdir()?;
    let csar = scratch.path().join("thinking.csar");
    pack_csar(fixtures.join("csar"), &csar)?;

    let output_path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| scratch.path().join("out"));
    let options = PipelineOptions { output_path, ..PipelineOptions::default() };
    let result = run_pipeline(&csar, Some(&fixtures.join("toskose.yml")), &options)?;
    for w in result.diagnostics.warnings() {
        eprintln!("{w}");
    }
    eprintln!("images: {}", result.images.join(" "));
    print!("{}", std::fs::read_to_string(&result.compose_path)?);
    Ok(())
}
