use indexmap::IndexMap;
use serde_yaml::Mapping;
use thiserror::Error;

use super::{
    value_to_env, ArtifactKind, ArtifactRef, LifecycleInterface, NodeKind, NodeTemplate, NodeTypeDef, OperationDef,
    RelKind, RelationshipInstance, ServiceTemplate, Value,
};

#[derive(Debug, Error)]
pub enum ToscaError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("node `{node}` has unknown type `{type_name}`")]
    UnknownNodeType { node: String, type_name: String },
    #[error("node `{node}` requirement `{requirement}` targets unknown node `{target}`")]
    UnresolvedTarget { node: String, requirement: String, target: String },
    #[error("node `{node}` requirement `{requirement}` has no known relationship type")]
    UnknownRelationship { node: String, requirement: String },
    #[error("invalid {kind} relationship from `{node}` to `{target}`: {reason}")]
    InvalidRelationship { kind: RelKind, node: String, target: String, reason: String },
}

fn syntax(msg: impl Into<String>) -> ToscaError {
    ToscaError::Syntax(msg.into())
}

/// Parse a TOSCA YAML service template into the TosKer graph model.
pub fn parse_service_template(document: &str) -> Result<ServiceTemplate, ToscaError> {
    let root: Value = if document.trim().is_empty() {
        Value::Mapping(Mapping::new())
    } else {
        serde_yaml::from_str(document).map_err(|e| syntax(e.to_string()))?
    };
    let root = match root {
        Value::Mapping(m) => m,
        Value::Null => Mapping::new(),
        _ => return Err(syntax("service template must be a mapping")),
    };

    let mut template = ServiceTemplate::default();

    if let Some(meta) = root.get("metadata") {
        let meta = as_mapping(meta, "metadata")?;
        for (k, v) in meta {
            let key = key_string(k)?;
            let val = value_to_env(v).ok_or_else(|| syntax(format!("metadata `{key}` must be a scalar")))?;
            template.metadata.insert(key, val);
        }
    }
    template.name = template.metadata.get("template_name").cloned().unwrap_or_default();
    if let Some(desc) = root.get("description") {
        template.description = Some(value_to_env(desc).ok_or_else(|| syntax("description must be text"))?);
    }
    if let Some(imports) = root.get("imports") {
        match imports {
            Value::Sequence(seq) => template.imports = seq.clone(),
            Value::Null => {}
            _ => return Err(syntax("imports must be a list")),
        }
    }
    if let Some(types) = root.get("node_types") {
        for (k, v) in as_mapping(types, "node_types")? {
            let name = key_string(k)?;
            template.node_types.insert(name.clone(), parse_node_type(&name, v)?);
        }
    }

    let topology = match root.get("topology_template") {
        None | Some(Value::Null) => return Ok(template),
        Some(t) => as_mapping(t, "topology_template")?,
    };
    if let Some(inputs) = topology.get("inputs") {
        for (k, v) in as_mapping(inputs, "inputs")? {
            template.inputs.insert(key_string(k)?, v.clone());
        }
    }
    let node_templates = match topology.get("node_templates") {
        None | Some(Value::Null) => return Ok(template),
        Some(n) => as_mapping(n, "node_templates")?,
    };

    // Nodes first, so requirements may point forward.
    let mut pending = Vec::new();
    for (k, v) in node_templates {
        let name = key_string(k)?;
        let body = as_mapping(v, &format!("node `{name}`"))?;
        let node = parse_node(&template, &name, body)?;
        if let Some(reqs) = body.get("requirements") {
            pending.push((name.clone(), reqs.clone()));
        }
        template.nodes.insert(name, node);
    }
    for (source, reqs) in pending {
        let reqs = match reqs {
            Value::Sequence(seq) => seq,
            Value::Null => continue,
            _ => return Err(syntax(format!("node `{source}`: requirements must be a list"))),
        };
        for entry in reqs {
            let entry = as_mapping(&entry, &format!("node `{source}` requirement"))?;
            for (rk, rv) in entry {
                let requirement = key_string(rk)?;
                let rel = parse_requirement(&template, &source, &requirement, rv)?;
                template.relationships.push(rel);
            }
        }
    }
    Ok(template)
}

fn as_mapping<'a>(value: &'a Value, what: &str) -> Result<&'a Mapping, ToscaError> {
    match value {
        Value::Mapping(m) => Ok(m),
        _ => Err(syntax(format!("{what} must be a mapping"))),
    }
}

fn key_string(key: &Value) -> Result<String, ToscaError> {
    value_to_env(key).filter(|k| !k.is_empty()).ok_or_else(|| syntax("mapping keys must be non-empty scalars"))
}

fn str_field<'a>(map: &'a Mapping, key: &str) -> Option<&'a str> {
    map.get(key).and_then(Value::as_str)
}

fn parse_node_type(name: &str, value: &Value) -> Result<NodeTypeDef, ToscaError> {
    let body = match value {
        Value::Null => return Ok(NodeTypeDef::default()),
        v => as_mapping(v, &format!("node type `{name}`"))?,
    };
    let mut def =
        NodeTypeDef { derived_from: str_field(body, "derived_from").map(str::to_owned), operations: Vec::new() };
    if let Some(ifaces) = body.get("interfaces") {
        for (_, iface) in as_mapping(ifaces, "interfaces")? {
            let Value::Mapping(iface) = iface else { continue };
            for (op, _) in iface {
                let op = key_string(op)?;
                if op != "type" && op != "inputs" && !def.operations.contains(&op) {
                    def.operations.push(op);
                }
            }
        }
    }
    Ok(def)
}

/// Kind of a TosKer type name, matched on the name itself: the base type, a
/// dotted extension of it, or any type whose last segment is the base name.
fn tosker_kind(type_name: &str) -> Option<NodeKind> {
    [NodeKind::Container, NodeKind::Software, NodeKind::Volume].into_iter().find(|kind| {
        let base = kind.base_type();
        let short = base.rsplit('.').next().unwrap_or(base);
        type_name == base || type_name.starts_with(&format!("{base}.")) || type_name.rsplit('.').next() == Some(short)
    })
}

pub(crate) fn resolve_kind(type_name: &str, node_types: &IndexMap<String, NodeTypeDef>) -> Option<NodeKind> {
    let mut cursor = type_name;
    for _ in 0..=node_types.len() {
        if let Some(kind) = tosker_kind(cursor) {
            return Some(kind);
        }
        cursor = node_types.get(cursor)?.derived_from.as_deref()?;
    }
    None
}

fn parse_artifact(name: &str, value: &Value) -> Result<ArtifactRef, ToscaError> {
    match value {
        Value::String(path) => Ok(ArtifactRef::file(name, path)),
        Value::Mapping(m) => {
            let path = str_field(m, "file").ok_or_else(|| syntax(format!("artifact `{name}` has no file")))?;
            let artifact_type = str_field(m, "type").map(str::to_owned);
            let kind = match &artifact_type {
                Some(t) if t.contains("Image") => ArtifactKind::Image,
                _ => ArtifactKind::File,
            };
            Ok(ArtifactRef {
                name: name.to_owned(),
                path: path.to_owned(),
                kind,
                artifact_type,
                repository: str_field(m, "repository").map(str::to_owned),
            })
        }
        _ => Err(syntax(format!("artifact `{name}` must be a path or a mapping"))),
    }
}

fn parse_node(template: &ServiceTemplate, name: &str, body: &Mapping) -> Result<NodeTemplate, ToscaError> {
    let type_name = str_field(body, "type").ok_or_else(|| syntax(format!("node `{name}` has no type")))?;
    let kind = resolve_kind(type_name, &template.node_types)
        .ok_or_else(|| ToscaError::UnknownNodeType { node: name.to_owned(), type_name: type_name.to_owned() })?;
    let mut node = NodeTemplate::new(name, kind);
    node.type_name = type_name.to_owned();

    if let Some(props) = body.get("properties") {
        if !props.is_null() {
            for (k, v) in as_mapping(props, &format!("node `{name}` properties"))? {
                node.properties.insert(key_string(k)?, v.clone());
            }
        }
    }

    match body.get("artifacts") {
        None | Some(Value::Null) => {}
        Some(Value::Mapping(m)) => {
            for (k, v) in m {
                let aname = key_string(k)?;
                node.artifacts.push(parse_artifact(&aname, v)?);
            }
        }
        Some(Value::Sequence(seq)) => {
            for entry in seq {
                for (k, v) in as_mapping(entry, &format!("node `{name}` artifact"))? {
                    let aname = key_string(k)?;
                    node.artifacts.push(parse_artifact(&aname, v)?);
                }
            }
        }
        Some(_) => return Err(syntax(format!("node `{name}`: artifacts must be a mapping or list"))),
    }

    if let Some(ifaces) = body.get("interfaces") {
        node.interface = parse_interfaces(name, &node, ifaces)?;
    }
    Ok(node)
}

fn parse_interfaces(name: &str, node: &NodeTemplate, ifaces: &Value) -> Result<LifecycleInterface, ToscaError> {
    let mut interface = LifecycleInterface::default();
    for (_, iface) in as_mapping(ifaces, &format!("node `{name}` interfaces"))? {
        let iface = as_mapping(iface, &format!("node `{name}` interface"))?;
        for (k, v) in iface {
            let op = key_string(k)?;
            if op == "type" || op == "inputs" {
                continue;
            }
            let (implementation, inputs) = match v {
                Value::String(path) => (path.clone(), IndexMap::new()),
                Value::Mapping(m) => {
                    let implementation = match m.get("implementation") {
                        Some(Value::String(p)) => p.clone(),
                        Some(Value::Mapping(im)) => str_field(im, "primary")
                            .ok_or_else(|| {
                                syntax(format!("node `{name}` operation `{op}` has no primary implementation"))
                            })?
                            .to_owned(),
                        _ => return Err(syntax(format!("node `{name}` operation `{op}` has no implementation"))),
                    };
                    let mut inputs = IndexMap::new();
                    if let Some(ins) = m.get("inputs") {
                        if !ins.is_null() {
                            for (ik, iv) in as_mapping(ins, "operation inputs")? {
                                inputs.insert(key_string(ik)?, iv.clone());
                            }
                        }
                    }
                    (implementation, inputs)
                }
                _ => return Err(syntax(format!("node `{name}` operation `{op}` must be a path or a mapping"))),
            };
            let artifact =
                node.artifact(&implementation).cloned().unwrap_or_else(|| ArtifactRef::file(&op, &implementation));
            interface.operations.insert(op, OperationDef { implementation, artifact, inputs });
        }
    }
    Ok(interface)
}

fn parse_requirement(
    template: &ServiceTemplate,
    source: &str,
    requirement: &str,
    value: &Value,
) -> Result<RelationshipInstance, ToscaError> {
    let (target, rel_type, location) = match value {
        Value::String(target) => (target.clone(), None, None),
        Value::Mapping(m) => {
            let target = str_field(m, "node")
                .ok_or_else(|| syntax(format!("node `{source}` requirement `{requirement}` has no node")))?;
            let (rel_type, location) = match m.get("relationship") {
                None | Some(Value::Null) => (None, None),
                Some(Value::String(t)) => (Some(t.clone()), None),
                Some(Value::Mapping(rm)) => {
                    let location = rm
                        .get("properties")
                        .and_then(Value::as_mapping)
                        .and_then(|p| p.get("location"))
                        .and_then(value_to_env);
                    (str_field(rm, "type").map(str::to_owned), location)
                }
                Some(_) => return Err(syntax(format!("node `{source}` relationship must be a type or mapping"))),
            };
            (target.to_owned(), rel_type, location)
        }
        _ => return Err(syntax(format!("node `{source}` requirement `{requirement}` must be a node name or mapping"))),
    };

    let kind = rel_type
        .as_deref()
        .and_then(RelKind::from_type_name)
        .or_else(|| RelKind::from_requirement(requirement))
        .ok_or_else(|| ToscaError::UnknownRelationship {
            node: source.to_owned(),
            requirement: requirement.to_owned(),
        })?;

    let Some(target_kind) = template.kind_of(&target) else {
        return Err(ToscaError::UnresolvedTarget {
            node: source.to_owned(),
            requirement: requirement.to_owned(),
            target,
        });
    };
    let source_kind = template.kind_of(source).expect("source parsed before requirements");
    if let Some(reason) = endpoint_violation(kind, source_kind, target_kind) {
        return Err(ToscaError::InvalidRelationship { kind, node: source.to_owned(), target, reason });
    }

    Ok(RelationshipInstance { kind, source: source.to_owned(), target, location, requirement: requirement.to_owned() })
}

/// Why a relationship of `kind` may not join these endpoint kinds, if it may not.
pub(crate) fn endpoint_violation(kind: RelKind, source: NodeKind, target: NodeKind) -> Option<String> {
    use NodeKind::*;
    let ok = match kind {
        RelKind::AttachesTo => source == Container && target == Volume,
        RelKind::HostedOn => source == Software && matches!(target, Software | Container),
        RelKind::ConnectsTo | RelKind::DependsOn => {
            matches!(source, Software | Container) && matches!(target, Software | Container)
        }
    };
    (!ok).then(|| {
        let expected = match kind {
            RelKind::AttachesTo => "CONTAINER to VOLUME",
            RelKind::HostedOn => "SOFTWARE to SOFTWARE or CONTAINER",
            RelKind::ConnectsTo | RelKind::DependsOn => "SOFTWARE/CONTAINER to SOFTWARE/CONTAINER",
        };
        format!("expected {expected}, found {source} to {target}")
    })
}

impl ServiceTemplate {
    /// Serialize back to a TOSCA YAML document that parses into an equal model.
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&Value::Mapping(self.to_document())).expect("yaml of plain values")
    }

    fn to_document(&self) -> Mapping {
        let mut doc = Mapping::new();
        doc.insert("tosca_definitions_version".into(), "tosca_simple_yaml_1_0".into());
        let mut meta = Mapping::new();
        if !self.name.is_empty() && !self.metadata.contains_key("template_name") {
            meta.insert("template_name".into(), self.name.clone().into());
        }
        for (k, v) in &self.metadata {
            meta.insert(k.clone().into(), v.clone().into());
        }
        if !meta.is_empty() {
            doc.insert("metadata".into(), Value::Mapping(meta));
        }
        if let Some(d) = &self.description {
            doc.insert("description".into(), d.clone().into());
        }
        if !self.imports.is_empty() {
            doc.insert("imports".into(), Value::Sequence(self.imports.clone()));
        }
        if !self.node_types.is_empty() {
            let mut types = Mapping::new();
            for (name, def) in &self.node_types {
                let mut body = Mapping::new();
                if let Some(parent) = &def.derived_from {
                    body.insert("derived_from".into(), parent.clone().into());
                }
                if !def.operations.is_empty() {
                    let mut ops = Mapping::new();
                    for op in &def.operations {
                        ops.insert(op.clone().into(), Value::Mapping(Mapping::new()));
                    }
                    let mut ifaces = Mapping::new();
                    ifaces.insert("Standard".into(), Value::Mapping(ops));
                    body.insert("interfaces".into(), Value::Mapping(ifaces));
                }
                types.insert(name.clone().into(), Value::Mapping(body));
            }
            doc.insert("node_types".into(), Value::Mapping(types));
        }

        let mut topology = Mapping::new();
        if !self.inputs.is_empty() {
            let inputs = self.inputs.iter().map(|(k, v)| (Value::from(k.clone()), v.clone())).collect();
            topology.insert("inputs".into(), Value::Mapping(inputs));
        }
        let mut nodes = Mapping::new();
        for node in self.nodes.values() {
            nodes.insert(node.name.clone().into(), Value::Mapping(self.node_document(node)));
        }
        topology.insert("node_templates".into(), Value::Mapping(nodes));
        doc.insert("topology_template".into(), Value::Mapping(topology));
        doc
    }

    fn node_document(&self, node: &NodeTemplate) -> Mapping {
        let mut body = Mapping::new();
        body.insert("type".into(), node.type_name.clone().into());
        if !node.properties.is_empty() {
            let props = node.properties.iter().map(|(k, v)| (Value::from(k.clone()), v.clone())).collect();
            body.insert("properties".into(), Value::Mapping(props));
        }
        if !node.artifacts.is_empty() {
            let mut arts = Mapping::new();
            for a in &node.artifacts {
                let value = if a.artifact_type.is_none() && a.repository.is_none() {
                    Value::from(a.path.clone())
                } else {
                    let mut m = Mapping::new();
                    m.insert("file".into(), a.path.clone().into());
                    if let Some(t) = &a.artifact_type {
                        m.insert("type".into(), t.clone().into());
                    }
                    if let Some(r) = &a.repository {
                        m.insert("repository".into(), r.clone().into());
                    }
                    Value::Mapping(m)
                };
                arts.insert(a.name.clone().into(), value);
            }
            body.insert("artifacts".into(), Value::Mapping(arts));
        }
        let reqs: Vec<Value> = self
            .outgoing(&node.name)
            .map(|r| {
                let mut rel = Mapping::new();
                rel.insert("type".into(), r.kind.type_name().into());
                if let Some(loc) = &r.location {
                    let mut props = Mapping::new();
                    props.insert("location".into(), loc.clone().into());
                    rel.insert("properties".into(), Value::Mapping(props));
                }
                let mut target = Mapping::new();
                target.insert("node".into(), r.target.clone().into());
                target.insert("relationship".into(), Value::Mapping(rel));
                let mut entry = Mapping::new();
                entry.insert(r.requirement.clone().into(), Value::Mapping(target));
                Value::Mapping(entry)
            })
            .collect();
        if !reqs.is_empty() {
            body.insert("requirements".into(), Value::Sequence(reqs));
        }
        if !node.interface.operations.is_empty() {
            let mut ops = Mapping::new();
            for (name, op) in &node.interface.operations {
                let mut m = Mapping::new();
                m.insert("implementation".into(), op.implementation.clone().into());
                if !op.inputs.is_empty() {
                    let inputs = op.inputs.iter().map(|(k, v)| (Value::from(k.clone()), v.clone())).collect();
                    m.insert("inputs".into(), Value::Mapping(inputs));
                }
                ops.insert(name.clone().into(), Value::Mapping(m));
            }
            let mut ifaces = Mapping::new();
            ifaces.insert("Standard".into(), Value::Mapping(ops));
            body.insert("interfaces".into(), Value::Mapping(ifaces));
        }
        body
    }
}
