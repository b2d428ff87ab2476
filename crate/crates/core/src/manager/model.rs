use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::config::{parse_config, validate_completed, validate_config, CompleteConfig, ConfigError};
use crate::diagnostics::ValidationReport;
use crate::tosca::{
    classify_nodes, parse_service_template, validate_topology, ServiceTemplate, ToscaError, STANDARD_OPERATIONS,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tosca(#[from] ToscaError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid application model:\n{0}")]
    Invalid(ValidationReport),
    #[error("configuration is incomplete")]
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Endpoint {
    pub alias: String,
    pub port: u16,
    pub user: String,
    #[serde(skip)]
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContainerModel {
    pub name: String,
    pub standalone: bool,
    /// Unit endpoint; absent for standalone containers.
    pub endpoint: Option<Endpoint>,
    pub components: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentModel {
    pub container: String,
    pub name: String,
    pub operations: Vec<String>,
}

impl ComponentModel {
    pub fn has_operation(&self, op: &str) -> bool {
        self.operations.iter().any(|o| o == op)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppModel {
    pub template: ServiceTemplate,
    pub config: CompleteConfig,
    /// Containers in template order.
    pub containers: IndexMap<String, ContainerModel>,
    /// Keyed by `(container, component)`.
    pub components: IndexMap<(String, String), ComponentModel>,
}

impl AppModel {
    pub fn container(&self, name: &str) -> Option<&ContainerModel> {
        self.containers.get(name)
    }

    pub fn component(&self, container: &str, component: &str) -> Option<&ComponentModel> {
        self.components.get(&(container.to_owned(), component.to_owned()))
    }
}

fn gate(report: ValidationReport) -> Result<(), ModelError> {
    if report.is_clean() {
        Ok(())
    } else {
        Err(ModelError::Invalid(report))
    }
}

/// Standard operations first, then the custom ones in declaration order.
fn ordered_operations<'a>(declared: impl Iterator<Item = &'a str>) -> Vec<String> {
    let declared: Vec<&str> = declared.collect();
    let mut ops: Vec<String> =
        STANDARD_OPERATIONS.iter().filter(|s| declared.contains(s)).map(|s| s.to_string()).collect();
    ops.extend(declared.iter().filter(|d| !STANDARD_OPERATIONS.contains(d)).map(|d| d.to_string()));
    ops
}

/// Build the model from the template document and a completed configuration document.
pub fn load_app_model(template_doc: &str, config_doc: &str) -> Result<AppModel, ModelError> {
    let template = parse_service_template(template_doc)?;
    gate(validate_topology(&template))?;
    let config = parse_config(config_doc)?;
    gate(validate_config(&config, &template))?;
    gate(validate_completed(&config, &template))?;
    let complete = config.to_complete().ok_or(ModelError::Incomplete)?;

    let classification = classify_nodes(&template);
    let mut containers = IndexMap::new();
    let mut components = IndexMap::new();
    for name in template.nodes.keys() {
        if let Some(hosted) = classification.hosting.get(name) {
            let unit = &complete.nodes[name];
            containers.insert(
                name.clone(),
                ContainerModel {
                    name: name.clone(),
                    standalone: false,
                    endpoint: Some(Endpoint {
                        alias: unit.alias.clone(),
                        port: unit.port,
                        user: unit.user.clone(),
                        password: unit.password.clone(),
                    }),
                    components: hosted.clone(),
                },
            );
            for comp in hosted {
                let node = &template.nodes[comp];
                components.insert(
                    (name.clone(), comp.clone()),
                    ComponentModel {
                        container: name.clone(),
                        name: comp.clone(),
                        operations: ordered_operations(node.interface.names()),
                    },
                );
            }
        } else if classification.is_standalone(name) {
            containers.insert(
                name.clone(),
                ContainerModel { name: name.clone(), standalone: true, endpoint: None, components: Vec::new() },
            );
        }
    }
    Ok(AppModel { template, config: complete, containers, components })
}
