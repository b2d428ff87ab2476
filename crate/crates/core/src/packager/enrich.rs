use indexmap::IndexMap;

use super::layout;
use crate::config::CompleteConfig;
use crate::diagnostics::{Diagnostic, ValidationReport};
use crate::tosca::{
    classify_nodes, value_to_env, ArtifactRef, NodeClassification, NodeKind, NodeTemplate, ServiceTemplate, Value,
};

/// Service name of the injected manager container.
pub const MANAGER_SERVICE: &str = "toskose-manager";

/// Images the toskosed images are assembled from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseImages {
    pub unit: String,
    pub manager: String,
}

impl Default for BaseImages {
    fn default() -> Self {
        Self { unit: "toskose/toskose-unit:latest".into(), manager: "toskose/toskose-manager:latest".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePlan {
    /// Image the service starts from: the template's image, or the manager base.
    pub base_image: String,
    /// Image the compose service runs.
    pub target_image: String,
    pub toskosed: bool,
    pub registry_password: Option<String>,
}

/// One on-demand program: a single lifecycle operation of a hosted component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgramPlan {
    pub name: String,
    pub component: String,
    pub operation: String,
    /// Archive-relative path of the script.
    pub archive_path: String,
    /// Script location inside the image.
    pub script: String,
    pub directory: String,
    /// `INPUT_*` variables of the component, passed to every one of its programs.
    pub inputs: Vec<String>,
}

pub fn program_name(component: &str, operation: &str) -> String {
    format!("{component}-{operation}")
}

/// `INPUT_<NAME>`: uppercased, anything but ASCII letters and digits mapped to `_`.
pub fn input_var(name: &str) -> String {
    let body: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' }).collect();
    format!("INPUT_{body}")
}

/// The template merged with a completed configuration and the manager node.
#[derive(Debug, Clone)]
pub struct EnrichedModel {
    pub template: ServiceTemplate,
    pub config: CompleteConfig,
    pub classification: NodeClassification,
    pub manager_node: NodeTemplate,
    /// Service → environment, in emission order.
    pub environment: IndexMap<String, IndexMap<String, String>>,
    pub images: IndexMap<String, ImagePlan>,
    /// Hosting container → its programs, hosted-component order then operation order.
    pub programs: IndexMap<String, Vec<ProgramPlan>>,
    pub base_images: BaseImages,
}

impl EnrichedModel {
    /// Containers in template order, then the manager.
    pub fn services(&self) -> Vec<&str> {
        self.template
            .nodes_of(NodeKind::Container)
            .map(|n| n.name.as_str())
            .chain(std::iter::once(MANAGER_SERVICE))
            .collect()
    }

    pub fn is_hosting(&self, service: &str) -> bool {
        self.classification.is_hosting(service)
    }

    pub fn alias_of(&self, service: &str) -> Option<&str> {
        if service == MANAGER_SERVICE {
            return Some(&self.config.manager.alias);
        }
        match self.config.nodes.get(service) {
            Some(unit) => Some(&unit.alias),
            None => self.template.node(service).map(|n| n.name.as_str()),
        }
    }
}

/// Pre-enrichment checks on what generation needs from the template.
///
/// Codes: `missing-image`, `input-collision`, `input-unrenderable`,
/// `missing-artifact-ref`.
pub fn check_model(t: &ServiceTemplate) -> ValidationReport {
    let mut report = ValidationReport::new();
    for c in t.nodes_of(NodeKind::Container) {
        if c.image().is_none() {
            report.push(Diagnostic::error("missing-image", Some(&c.name), "container declares no image artifact"));
        }
    }
    let classes = classify_nodes(t);
    for (container, hosted) in &classes.hosting {
        let mut seen: IndexMap<String, (String, String)> = IndexMap::new();
        for component in hosted {
            for (var, value) in component_inputs(t, component) {
                let value = match value {
                    Ok(v) => v,
                    Err(InputError::Unrenderable) => {
                        report.push(Diagnostic::error(
                            "input-unrenderable",
                            Some(component),
                            format!("{var} is neither a scalar nor a supported function"),
                        ));
                        continue;
                    }
                    Err(InputError::UnknownArtifact(name)) => {
                        report.push(Diagnostic::error(
                            "missing-artifact-ref",
                            Some(component),
                            format!("{var} refers to unknown artifact `{name}`"),
                        ));
                        continue;
                    }
                };
                match seen.get(&var) {
                    Some((_, prev)) if *prev == value => {}
                    Some((owner, prev)) => report.push(Diagnostic::error(
                        "input-collision",
                        Some(component),
                        format!("{var}={value} conflicts with {var}={prev} from `{owner}` on container `{container}`"),
                    )),
                    None => {
                        seen.insert(var, (component.clone(), value));
                    }
                }
            }
        }
    }
    report
}

#[derive(Debug, PartialEq)]
enum InputError {
    Unrenderable,
    UnknownArtifact(String),
}

/// Every `INPUT_*` a component contributes: its properties, then each
/// operation's inputs in operation order. Duplicates are kept.
fn component_inputs(t: &ServiceTemplate, component: &str) -> Vec<(String, Result<String, InputError>)> {
    let Some(node) = t.node(component) else {
        return Vec::new();
    };
    let props = node.properties.iter();
    let inputs = node.interface.operations.values().flat_map(|op| op.inputs.iter());
    props.chain(inputs).map(|(name, value)| (input_var(name), render_input(t, node, value))).collect()
}

fn render_input(t: &ServiceTemplate, node: &NodeTemplate, value: &Value) -> Result<String, InputError> {
    let value = t.resolve_input(value);
    if let Some(text) = value_to_env(value) {
        return Ok(text);
    }
    let Value::Mapping(map) = value else {
        return Err(InputError::Unrenderable);
    };
    if map.len() != 1 {
        return Err(InputError::Unrenderable);
    }
    let (func, args) = map.iter().next().expect("one entry");
    let args: Vec<&str> = match args {
        Value::Sequence(seq) => seq.iter().filter_map(Value::as_str).collect(),
        _ => return Err(InputError::Unrenderable),
    };
    let self_ref = |who: &str| who == "SELF" || who == node.name;
    match (func.as_str(), args.as_slice()) {
        (Some("get_artifact"), [who, name, ..]) if self_ref(who) => node
            .artifact(name)
            .map(|a: &ArtifactRef| layout::artifact_path(&node.name, &a.path))
            .ok_or_else(|| InputError::UnknownArtifact((*name).to_owned())),
        (Some("get_property"), [who, name]) if self_ref(who) => {
            node.properties.get(*name).and_then(|v| value_to_env(t.resolve_input(v))).ok_or(InputError::Unrenderable)
        }
        _ => Err(InputError::Unrenderable),
    }
}

/// Merge a completed configuration into the template. Inputs are expected
/// to have passed [`check_model`]; on a collision the first value wins.
pub fn enrich_model(t: &ServiceTemplate, c: &CompleteConfig, base_images: &BaseImages) -> EnrichedModel {
    let classification = classify_nodes(t);
    let mut environment = IndexMap::new();
    let mut images = IndexMap::new();
    let mut programs = IndexMap::new();

    for node in t.nodes_of(NodeKind::Container) {
        let base = node.image().map(|a| a.path.clone()).unwrap_or_default();
        let mut env = IndexMap::new();
        match (classification.hosting.get(&node.name), c.nodes.get(&node.name)) {
            (Some(hosted), Some(unit)) => {
                env.insert("SUPERVISORD_ALIAS".into(), unit.alias.clone());
                env.insert("SUPERVISORD_PORT".into(), unit.port.to_string());
                env.insert("SUPERVISORD_USER".into(), unit.user.clone());
                env.insert("SUPERVISORD_PASSWORD".into(), unit.password.clone());
                env.insert("SUPERVISORD_LOG_LEVEL".into(), unit.log_level.clone());
                let mut plans = Vec::new();
                for component in hosted {
                    let mut vars = Vec::new();
                    for (var, value) in component_inputs(t, component) {
                        if let Ok(value) = value {
                            env.entry(var.clone()).or_insert(value);
                        }
                        if !vars.contains(&var) {
                            vars.push(var);
                        }
                    }
                    let sw = t.node(component).expect("classified component exists");
                    for (op, def) in &sw.interface.operations {
                        plans.push(ProgramPlan {
                            name: program_name(component, op),
                            component: component.clone(),
                            operation: op.clone(),
                            archive_path: def.artifact.path.clone(),
                            script: layout::script_path(component, &def.artifact.path),
                            directory: layout::app_dir(component),
                            inputs: vars.clone(),
                        });
                    }
                }
                programs.insert(node.name.clone(), plans);
                images.insert(
                    node.name.clone(),
                    ImagePlan {
                        base_image: base,
                        target_image: unit.docker.reference(),
                        toskosed: true,
                        registry_password: unit.docker.registry_password.clone(),
                    },
                );
            }
            _ => {
                images.insert(
                    node.name.clone(),
                    ImagePlan {
                        target_image: base.clone(),
                        base_image: base,
                        toskosed: false,
                        registry_password: None,
                    },
                );
            }
        }
        if let Some(Value::Mapping(vars)) = node.properties.get("env_variables") {
            for (k, v) in vars {
                if let (Some(k), Some(v)) = (value_to_env(k), value_to_env(t.resolve_input(v))) {
                    env.entry(k).or_insert(v);
                }
            }
        }
        environment.insert(node.name.clone(), env);
    }

    let m = &c.manager;
    let mut manager_node = NodeTemplate::new(MANAGER_SERVICE, NodeKind::Container);
    manager_node.artifacts.push(ArtifactRef {
        name: "image".into(),
        path: m.docker.reference(),
        kind: crate::tosca::ArtifactKind::Image,
        artifact_type: None,
        repository: None,
    });
    let mut env = IndexMap::new();
    env.insert("TOSKOSE_MANAGER_PORT".into(), m.port.to_string());
    env.insert("TOSKOSE_APP_MODE".into(), m.mode.clone());
    env.insert("SECRET_KEY".into(), m.secret_key.clone());
    environment.insert(MANAGER_SERVICE.into(), env);
    images.insert(
        MANAGER_SERVICE.into(),
        ImagePlan {
            base_image: base_images.manager.clone(),
            target_image: m.docker.reference(),
            toskosed: true,
            registry_password: m.docker.registry_password.clone(),
        },
    );

    EnrichedModel {
        template: t.clone(),
        config: c.clone(),
        classification,
        manager_node,
        environment,
        images,
        programs,
        base_images: base_images.clone(),
    }
}
