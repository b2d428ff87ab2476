use std::collections::{HashMap, HashSet};

use super::parse::endpoint_violation;
use super::{NodeKind, RelKind, ServiceTemplate, CONTAINER_PROPERTIES, STANDARD_OPERATIONS};
use crate::diagnostics::{Diagnostic, ValidationReport};

/// Check every structural rule of the TosKer model.
///
/// Codes: `dangling-relationship`, `invalid-relationship`,
/// `attachment-without-location`, `container-property`,
/// `software-without-host`, `software-multiple-hosts`, `volume-outgoing`,
/// `host-cycle`, `undeclared-operation`, `artifact-path`.
pub fn validate_topology(t: &ServiceTemplate) -> ValidationReport {
    let mut report = ValidationReport::new();

    for rel in &t.relationships {
        let (Some(sk), Some(tk)) = (t.kind_of(&rel.source), t.kind_of(&rel.target)) else {
            let missing = if t.kind_of(&rel.source).is_none() { &rel.source } else { &rel.target };
            report.push(Diagnostic::error(
                "dangling-relationship",
                Some(&rel.source),
                format!("{} relationship names unknown node `{missing}`", rel.kind),
            ));
            continue;
        };
        if let Some(reason) = endpoint_violation(rel.kind, sk, tk) {
            report.push(Diagnostic::error(
                "invalid-relationship",
                Some(&rel.source),
                format!("{} to `{}`: {reason}", rel.kind, rel.target),
            ));
        }
        if rel.kind == RelKind::AttachesTo && rel.location.as_deref().is_none_or(|l| l.trim().is_empty()) {
            report.push(Diagnostic::error(
                "attachment-without-location",
                Some(&rel.source),
                format!("attachment to `{}` has no mount location", rel.target),
            ));
        }
    }

    for node in t.nodes.values() {
        match node.kind {
            NodeKind::Container => {
                for prop in node.properties.keys() {
                    if !CONTAINER_PROPERTIES.contains(&prop.as_str()) {
                        report.push(Diagnostic::error(
                            "container-property",
                            Some(&node.name),
                            format!("unsupported container property `{prop}`"),
                        ));
                    }
                }
            }
            NodeKind::Software => {
                let hosts = t.hosts_of(&node.name).count();
                if hosts == 0 {
                    report.push(Diagnostic::error(
                        "software-without-host",
                        Some(&node.name),
                        "software component is not hosted on anything",
                    ));
                } else if hosts > 1 {
                    report.push(Diagnostic::error(
                        "software-multiple-hosts",
                        Some(&node.name),
                        format!("software component has {hosts} hosts"),
                    ));
                }
                let declared = t.declared_operations(&node.type_name);
                for op in node.interface.names() {
                    if !STANDARD_OPERATIONS.contains(&op) && !declared.iter().any(|d| d == op) {
                        report.push(Diagnostic::error(
                            "undeclared-operation",
                            Some(&node.name),
                            format!("operation `{op}` is neither standard nor declared by `{}`", node.type_name),
                        ));
                    }
                }
            }
            NodeKind::Volume => {
                if t.outgoing(&node.name).next().is_some() {
                    report.push(Diagnostic::error(
                        "volume-outgoing",
                        Some(&node.name),
                        "volumes cannot have outgoing relationships",
                    ));
                }
            }
        }
        for artifact in node
            .artifacts
            .iter()
            .filter(|a| a.kind == super::ArtifactKind::File)
            .chain(node.interface.operations.values().map(|op| &op.artifact))
        {
            if !artifact.is_enclosed() {
                report.push(Diagnostic::error(
                    "artifact-path",
                    Some(&node.name),
                    format!("artifact path `{}` escapes the archive root", artifact.path),
                ));
            }
        }
    }

    for cycle in host_cycles(t) {
        report.push(Diagnostic::error(
            "host-cycle",
            Some(&cycle[0]),
            format!("HostedOn cycle: {}", cycle.join(" -> ")),
        ));
    }
    report
}

/// Each HostedOn cycle once, rotated to start at its smallest node name.
fn host_cycles(t: &ServiceTemplate) -> Vec<Vec<String>> {
    let mut edges: HashMap<&str, Vec<&str>> = HashMap::new();
    for r in t.relationships.iter().filter(|r| r.kind == RelKind::HostedOn) {
        edges.entry(r.source.as_str()).or_default().push(r.target.as_str());
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    fn visit<'a>(
        node: &'a str,
        edges: &HashMap<&'a str, Vec<&'a str>>,
        marks: &mut HashMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
        found: &mut HashSet<Vec<String>>,
    ) {
        marks.insert(node, Mark::Open);
        stack.push(node);
        for &next in edges.get(node).into_iter().flatten() {
            match marks.get(next) {
                Some(Mark::Open) => {
                    let start = stack.iter().position(|&n| n == next).unwrap();
                    let mut cycle: Vec<String> = stack[start..].iter().map(|s| s.to_string()).collect();
                    let min = cycle.iter().enumerate().min_by(|a, b| a.1.cmp(b.1)).map(|(i, _)| i).unwrap();
                    cycle.rotate_left(min);
                    found.insert(cycle);
                }
                Some(Mark::Done) => {}
                None => visit(next, edges, marks, stack, found),
            }
        }
        stack.pop();
        marks.insert(node, Mark::Done);
    }

    let mut marks = HashMap::new();
    let mut found = HashSet::new();
    for name in t.nodes.keys() {
        if !marks.contains_key(name.as_str()) {
            visit(name, &edges, &mut marks, &mut Vec::new(), &mut found);
        }
    }
    let mut cycles: Vec<_> = found.into_iter().collect();
    cycles.sort();
    cycles
}
