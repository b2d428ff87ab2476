//! TOSCA application model restricted to the TosKer node and relationship
//! types: Docker containers, Docker volumes and the software components they
//! host.
//!
//! The entry points are [`read_csar`] to open an archive,
//! [`parse_service_template`] to build the in-memory graph,
//! [`validate_topology`] to check it and [`classify_nodes`] to split the
//! containers into those hosting components and standalone ones.

mod classify;
mod csar;
mod parse;
mod validate;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use classify::{classify_nodes, NodeClassification};
pub use csar::{pack_csar, read_csar, CsarArchive, CsarError};
pub use parse::{parse_service_template, ToscaError};
pub use validate::validate_topology;

/// Property and input values keep whatever structure the template used.
pub type Value = serde_yaml::Value;

/// The standard TOSCA lifecycle operations.
pub const STANDARD_OPERATIONS: [&str; 5] = ["create", "configure", "start", "stop", "delete"];

/// Properties a TosKer container may carry.
pub const CONTAINER_PROPERTIES: [&str; 4] = ["ports", "env_variables", "command", "share_data"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    Container,
    Software,
    Volume,
}

impl NodeKind {
    pub(crate) fn base_type(self) -> &'static str {
        match self {
            NodeKind::Container => "tosker.nodes.Container",
            NodeKind::Software => "tosker.nodes.Software",
            NodeKind::Volume => "tosker.nodes.Volume",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Container => "CONTAINER",
            NodeKind::Software => "SOFTWARE",
            NodeKind::Volume => "VOLUME",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelKind {
    HostedOn,
    ConnectsTo,
    AttachesTo,
    DependsOn,
}

impl RelKind {
    pub fn type_name(self) -> &'static str {
        match self {
            RelKind::HostedOn => "tosca.relationships.HostedOn",
            RelKind::ConnectsTo => "tosca.relationships.ConnectsTo",
            RelKind::AttachesTo => "tosca.relationships.AttachesTo",
            RelKind::DependsOn => "tosca.relationships.DependsOn",
        }
    }

    /// Requirement name TosKer uses for this relationship.
    pub fn requirement(self) -> &'static str {
        match self {
            RelKind::HostedOn => "host",
            RelKind::ConnectsTo => "connection",
            RelKind::AttachesTo => "storage",
            RelKind::DependsOn => "dependency",
        }
    }

    pub(crate) fn from_requirement(name: &str) -> Option<Self> {
        match name {
            "host" => Some(RelKind::HostedOn),
            "connection" => Some(RelKind::ConnectsTo),
            "storage" => Some(RelKind::AttachesTo),
            "dependency" => Some(RelKind::DependsOn),
            _ => None,
        }
    }

    pub(crate) fn from_type_name(name: &str) -> Option<Self> {
        let last = name.rsplit('.').next().unwrap_or(name);
        match last {
            "HostedOn" => Some(RelKind::HostedOn),
            "ConnectsTo" => Some(RelKind::ConnectsTo),
            "AttachesTo" => Some(RelKind::AttachesTo),
            "DependsOn" => Some(RelKind::DependsOn),
            _ => None,
        }
    }
}

impl fmt::Display for RelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelKind::HostedOn => "HOSTED_ON",
            RelKind::ConnectsTo => "CONNECTS_TO",
            RelKind::AttachesTo => "ATTACHES_TO",
            RelKind::DependsOn => "DEPENDS_ON",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    /// A container image reference such as `mongo:3.4`; not a file in the archive.
    Image,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub name: String,
    /// Archive-relative path, or the image reference for [`ArtifactKind::Image`].
    pub path: String,
    pub kind: ArtifactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repository: Option<String>,
}

impl ArtifactRef {
    pub fn file(name: &str, path: &str) -> Self {
        Self {
            name: name.to_owned(),
            path: path.to_owned(),
            kind: ArtifactKind::File,
            artifact_type: None,
            repository: None,
        }
    }

    /// Forward slashes only, relative, and never climbing above the archive root.
    pub fn is_enclosed(&self) -> bool {
        is_enclosed_path(&self.path)
    }

    pub fn file_name(&self) -> &str {
        self.path.rsplit('/').next().unwrap_or(&self.path)
    }
}

pub(crate) fn is_enclosed_path(path: &str) -> bool {
    if path.is_empty() || path.contains('\\') || path.starts_with('/') {
        return false;
    }
    let mut depth: i32 = 0;
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => depth += 1,
        }
    }
    depth > 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationDef {
    /// The implementation as written: either an archive path or an artifact name.
    pub implementation: String,
    pub artifact: ArtifactRef,
    #[serde(default)]
    pub inputs: IndexMap<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LifecycleInterface {
    pub operations: IndexMap<String, OperationDef>,
}

impl LifecycleInterface {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.operations.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTemplate {
    pub name: String,
    pub type_name: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub properties: IndexMap<String, Value>,
    #[serde(default)]
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default)]
    pub interface: LifecycleInterface,
}

impl NodeTemplate {
    pub fn new(name: &str, kind: NodeKind) -> Self {
        Self {
            name: name.to_owned(),
            type_name: kind.base_type().to_owned(),
            kind,
            properties: IndexMap::new(),
            artifacts: Vec::new(),
            interface: LifecycleInterface::default(),
        }
    }

    pub fn artifact(&self, name: &str) -> Option<&ArtifactRef> {
        self.artifacts.iter().find(|a| a.name == name)
    }

    /// The image a container is created from, if it declares one.
    pub fn image(&self) -> Option<&ArtifactRef> {
        self.artifacts.iter().find(|a| a.kind == ArtifactKind::Image)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipInstance {
    pub kind: RelKind,
    pub source: String,
    pub target: String,
    /// Mount path; only meaningful for [`RelKind::AttachesTo`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    /// Requirement name the relationship was declared under (`host`, `storage`, ...).
    pub requirement: String,
}

impl RelationshipInstance {
    pub fn new(kind: RelKind, source: &str, target: &str) -> Self {
        Self {
            kind,
            source: source.to_owned(),
            target: target.to_owned(),
            location: None,
            requirement: kind.requirement().to_owned(),
        }
    }

    pub fn with_location(mut self, location: &str) -> Self {
        self.location = Some(location.to_owned());
        self
    }
}

/// A node type declared inside the template, typically extending a TosKer base type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<String>,
    /// Interface operations the type declares in addition to its parent's.
    #[serde(default)]
    pub operations: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceTemplate {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub metadata: IndexMap<String, String>,
    #[serde(default)]
    pub imports: Vec<Value>,
    #[serde(default)]
    pub node_types: IndexMap<String, NodeTypeDef>,
    #[serde(default)]
    pub inputs: IndexMap<String, Value>,
    pub nodes: IndexMap<String, NodeTemplate>,
    #[serde(default)]
    pub relationships: Vec<RelationshipInstance>,
}

impl ServiceTemplate {
    pub fn node(&self, name: &str) -> Option<&NodeTemplate> {
        self.nodes.get(name)
    }

    pub fn kind_of(&self, name: &str) -> Option<NodeKind> {
        self.nodes.get(name).map(|n| n.kind)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &NodeTemplate> {
        self.nodes.values().filter(move |n| n.kind == kind)
    }

    pub fn outgoing<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a RelationshipInstance> {
        self.relationships.iter().filter(move |r| r.source == node)
    }

    /// Direct HostedOn targets of `node`.
    pub fn hosts_of<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a str> {
        self.outgoing(node).filter(|r| r.kind == RelKind::HostedOn).map(|r| r.target.as_str())
    }

    /// Operations a node's type chain declares beyond the standard lifecycle.
    pub fn declared_operations(&self, type_name: &str) -> Vec<String> {
        let mut ops = Vec::new();
        let mut cursor = Some(type_name);
        let mut seen = 0;
        while let Some(t) = cursor {
            let Some(def) = self.node_types.get(t) else { break };
            ops.extend(def.operations.iter().cloned());
            cursor = def.derived_from.as_deref();
            seen += 1;
            if seen > self.node_types.len() {
                break;
            }
        }
        ops
    }

    /// Application name used for image naming; taken from the template metadata.
    pub fn app_name(&self) -> &str {
        &self.name
    }

    /// Resolve `get_input` against the topology inputs' defaults. Other
    /// values are returned as they are.
    pub fn resolve_input<'a>(&'a self, value: &'a Value) -> &'a Value {
        if let Value::Mapping(map) = value {
            if map.len() == 1 {
                if let Some(Value::String(input)) = map.get("get_input") {
                    if let Some(def) = self.inputs.get(input) {
                        if let Value::Mapping(d) = def {
                            if let Some(default) = d.get("default") {
                                return default;
                            }
                        } else {
                            return def;
                        }
                    }
                }
            }
        }
        value
    }
}

/// Render a scalar property or input as the text an environment variable carries.
pub fn value_to_env(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Null => Some(String::new()),
        Value::Tagged(t) => value_to_env(&t.value),
        Value::Sequence(_) | Value::Mapping(_) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enclosed_paths() {
        assert!(is_enclosed_path("api/install.sh"));
        assert!(is_enclosed_path("a/../b.sh"));
        assert!(!is_enclosed_path("../etc/passwd"));
        assert!(!is_enclosed_path("a/../../b"));
        assert!(!is_enclosed_path("/abs/path"));
        assert!(!is_enclosed_path("win\\path.sh"));
        assert!(!is_enclosed_path(""));
        assert!(!is_enclosed_path("a/.."));
    }

    #[test]
    fn relationship_names() {
        for kind in [RelKind::HostedOn, RelKind::ConnectsTo, RelKind::AttachesTo, RelKind::DependsOn] {
            assert_eq!(RelKind::from_requirement(kind.requirement()), Some(kind));
            assert_eq!(RelKind::from_type_name(kind.type_name()), Some(kind));
        }
    }
}
