//! Artifact generation: enrich the model with the configuration and the
//! manager node, render unit configurations and build contexts, build the
//! toskosed images and emit the Compose document.

mod build;
mod compose;
mod contexts;
mod enrich;
pub mod layout;
mod pipeline;
mod supervisor;

use std::io;

use thiserror::Error;

pub use build::{build_images, split_reference, BuildError, BuildRequest, DryRunBuilder, EngineBuilder, ImageBuilder};
pub use compose::{generate_compose, ComposeModel, NetworkSpec, ServiceNetwork, ServiceSpec, COMPOSE_VERSION, NETWORK};
pub use contexts::{
    generate_contexts, manager_dockerfile, unit_dockerfile, BuildContext, ContextKind, ContextSources, FileSource,
};
pub use enrich::{
    check_model, enrich_model, input_var, program_name, BaseImages, EnrichedModel, ImagePlan, ProgramPlan,
    MANAGER_SERVICE,
};
pub use pipeline::{
    run_pipeline, run_pipeline_with, Failure, PipelineError, PipelineOptions, PipelineResult, Stage, COMPOSE_FILE,
    CONFIG_FILE, CONTEXTS_DIR,
};
pub use supervisor::{generate_supervisor_config, STARTSECS, STOPWAITSECS};

#[derive(Debug, Error)]
pub enum PackagerError {
    #[error("`{0}` is not a container hosting components")]
    NotAHostingContainer(String),
    #[error("artifact `{path}` of `{component}` is not in the archive")]
    MissingArtifact { component: String, path: String },
    #[error("two artifacts map to `{path}` in the context of `{container}`")]
    ContextCollision { container: String, path: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}
