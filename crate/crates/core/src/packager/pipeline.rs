use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::{debug, info};

use super::build::{build_images, BuildError, DryRunBuilder, EngineBuilder, ImageBuilder};
use super::compose::{generate_compose, ComposeModel};
use super::contexts::{generate_contexts, BuildContext, ContextSources};
use super::enrich::{check_model, enrich_model, BaseImages};
use super::PackagerError;
use crate::config::{
    complete_config, parse_config, validate_completed, validate_config, CompletionDefaults, ConfigError, ToskoseConfig,
};
use crate::diagnostics::ValidationReport;
use crate::tosca::{parse_service_template, read_csar, validate_topology, CsarError, ToscaError};

pub const COMPOSE_FILE: &str = "docker-compose.yml";
pub const CONFIG_FILE: &str = "toskose.yml";
pub const CONTEXTS_DIR: &str = "contexts";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ReadCsar,
    ParseTemplate,
    ValidateTopology,
    ReadConfig,
    ValidateConfig,
    CompleteConfig,
    CheckModel,
    Enrich,
    Contexts,
    Build,
    Compose,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::ReadCsar => "read-csar",
            Stage::ParseTemplate => "parse-template",
            Stage::ValidateTopology => "validate-topology",
            Stage::ReadConfig => "read-config",
            Stage::ValidateConfig => "validate-config",
            Stage::CompleteConfig => "complete-config",
            Stage::CheckModel => "check-model",
            Stage::Enrich => "enrich",
            Stage::Contexts => "contexts",
            Stage::Build => "build",
            Stage::Compose => "compose",
        })
    }
}

#[derive(Debug, Error)]
pub enum Failure {
    #[error(transparent)]
    Csar(#[from] CsarError),
    #[error(transparent)]
    Tosca(#[from] ToscaError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("validation failed:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Packager(#[from] PackagerError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("{stage}: {failure}")]
pub struct PipelineError {
    pub stage: Stage,
    pub failure: Failure,
}

impl PipelineError {
    pub fn report(&self) -> Option<&ValidationReport> {
        match &self.failure {
            Failure::Invalid(r) => Some(r),
            _ => None,
        }
    }
}

fn at<E: Into<Failure>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, failure: e.into() }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub output_path: PathBuf,
    pub push: bool,
    /// Container engine API; dry-run building when unset.
    pub docker_url: Option<String>,
    /// Owner prefix for default image names.
    pub repository: Option<String>,
    pub base_images: BaseImages,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            output_path: PathBuf::from("."),
            push: false,
            docker_url: None,
            repository: None,
            base_images: BaseImages::default(),
        }
    }
}

#[derive(Debug)]
pub struct PipelineResult {
    pub compose: ComposeModel,
    pub compose_path: PathBuf,
    pub config: ToskoseConfig,
    pub config_path: PathBuf,
    pub contexts: Vec<BuildContext>,
    pub images: Vec<String>,
    /// Warnings collected on the way; errors abort the run instead.
    pub diagnostics: ValidationReport,
}

/// Run every stage with the builder chosen by `options.docker_url`.
pub fn run_pipeline(
    csar_path: &Path,
    config_path: Option<&Path>,
    options: &PipelineOptions,
) -> Result<PipelineResult, PipelineError> {
    match &options.docker_url {
        Some(url) => {
            let mut engine = EngineBuilder::connect(url).map_err(at(Stage::Build))?;
            run_pipeline_with(csar_path, config_path, options, &mut engine)
        }
        None => run_pipeline_with(csar_path, config_path, options, &mut DryRunBuilder::default()),
    }
}

/// Run every stage, failing fast. Nothing is written to the output path
/// before all validation stages pass; the unpacked archive is removed on return.
pub fn run_pipeline_with(
    csar_path: &Path,
    config_path: Option<&Path>,
    options: &PipelineOptions,
    builder: &mut dyn ImageBuilder,
) -> Result<PipelineResult, PipelineError> {
    let mut warnings = ValidationReport::new();
    let mut gate = |stage: Stage, report: ValidationReport| -> Result<(), PipelineError> {
        debug!(%stage, diagnostics = report.diagnostics.len(), "gate");
        if report.is_clean() {
            for w in report.warnings() {
                warnings.push(w.clone());
            }
            Ok(())
        } else {
            Err(PipelineError { stage, failure: Failure::Invalid(report) })
        }
    };

    info!(stage = %Stage::ReadCsar, path = %csar_path.display());
    let archive = read_csar(csar_path).map_err(at(Stage::ReadCsar))?;
    let document = archive.read_entry_definitions().map_err(at(Stage::ReadCsar))?;

    info!(stage = %Stage::ParseTemplate, entry = %archive.entry_definitions);
    let template = parse_service_template(&document).map_err(at(Stage::ParseTemplate))?;
    gate(Stage::ValidateTopology, validate_topology(&template))?;

    info!(stage = %Stage::ReadConfig, provided = config_path.is_some());
    let partial = match config_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(at(Stage::ReadConfig))?;
            parse_config(&text).map_err(at(Stage::ReadConfig))?
        }
        None => ToskoseConfig::default(),
    };
    gate(Stage::ValidateConfig, validate_config(&partial, &template))?;

    let mut defaults = CompletionDefaults::for_template(&template).with_repository(options.repository.clone());
    if defaults.app_name.is_empty() {
        defaults.app_name = archive.stem();
    }
    let completed = complete_config(&partial, &template, &defaults);
    gate(Stage::CompleteConfig, validate_completed(&completed, &template))?;
    let complete = completed.to_complete().ok_or_else(|| PipelineError {
        stage: Stage::CompleteConfig,
        failure: Failure::Invalid(validate_completed(&completed, &template)),
    })?;
    gate(Stage::CheckModel, check_model(&template))?;

    info!(stage = %Stage::Enrich);
    let model = enrich_model(&template, &complete, &options.base_images);
    let config_document = completed.to_yaml();

    info!(stage = %Stage::Contexts);
    let contexts = generate_contexts(
        &model,
        ContextSources {
            archive_root: archive.root(),
            template_document: &document,
            config_document: &config_document,
        },
    )
    .map_err(at(Stage::Contexts))?;
    let compose = generate_compose(&model);

    let out = &options.output_path;
    let contexts_dir = out.join(CONTEXTS_DIR);
    fs::create_dir_all(&contexts_dir).map_err(at(Stage::Contexts))?;
    for ctx in &contexts {
        ctx.materialize(&contexts_dir.join(&ctx.container)).map_err(at(Stage::Contexts))?;
    }

    info!(stage = %Stage::Build, contexts = contexts.len(), push = options.push);
    let images =
        build_images(&contexts, &model.images, &contexts_dir, builder, options.push).map_err(at(Stage::Build))?;

    info!(stage = %Stage::Compose);
    let compose_path = out.join(COMPOSE_FILE);
    fs::write(&compose_path, compose.to_yaml()).map_err(at(Stage::Compose))?;
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, &config_document).map_err(at(Stage::Compose))?;

    Ok(PipelineResult {
        compose,
        compose_path,
        config: completed,
        config_path,
        contexts,
        images,
        diagnostics: warnings,
    })
}
