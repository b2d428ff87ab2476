use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{NodeKind, ServiceTemplate};

/// Containers split by whether they host software components.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeClassification {
    /// Hosting container → hosted components, ordered by host-chain depth then name.
    pub hosting: IndexMap<String, Vec<String>>,
    pub standalone: Vec<String>,
}

impl NodeClassification {
    pub fn is_hosting(&self, container: &str) -> bool {
        self.hosting.contains_key(container)
    }

    pub fn is_standalone(&self, container: &str) -> bool {
        self.standalone.iter().any(|c| c == container)
    }

    /// The container a component ultimately runs in.
    pub fn container_of(&self, component: &str) -> Option<&str> {
        self.hosting.iter().find(|(_, comps)| comps.iter().any(|c| c == component)).map(|(c, _)| c.as_str())
    }
}

/// Partition the containers of a validated template. Both lists follow the
/// template's declaration order.
pub fn classify_nodes(t: &ServiceTemplate) -> NodeClassification {
    let mut placed: IndexMap<String, Vec<(usize, String)>> = IndexMap::new();
    for sw in t.nodes_of(NodeKind::Software) {
        if let Some((container, depth)) = root_container(t, &sw.name) {
            placed.entry(container).or_default().push((depth, sw.name.clone()));
        }
    }

    let mut out = NodeClassification::default();
    for c in t.nodes_of(NodeKind::Container) {
        match placed.swap_remove(&c.name) {
            Some(mut hosted) => {
                hosted.sort();
                out.hosting.insert(c.name.clone(), hosted.into_iter().map(|(_, n)| n).collect());
            }
            None => out.standalone.push(c.name.clone()),
        }
    }
    out
}

/// Follow HostedOn edges to a container, returning it and the number of hops.
fn root_container(t: &ServiceTemplate, software: &str) -> Option<(String, usize)> {
    let mut current = software;
    for depth in 1..=t.nodes.len() {
        let host = t.hosts_of(current).next()?;
        match t.kind_of(host)? {
            NodeKind::Container => return Some((host.to_owned(), depth)),
            NodeKind::Software => current = host,
            NodeKind::Volume => return None,
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tosca::{parse_service_template, NodeTemplate, RelKind, RelationshipInstance};

    #[test]
    fn thinking_classification() {
        let t = parse_service_template(include_str!("../../fixtures/thinking/csar/thinking.yaml")).unwrap();
        let c = classify_nodes(&t);
        assert_eq!(c.hosting["maven"], vec!["api", "logsniffer"]);
        assert_eq!(c.hosting["node"], vec!["gui"]);
        assert_eq!(c.hosting.len(), 2);
        assert_eq!(c.standalone, vec!["mongodb"]);
        assert_eq!(c.container_of("gui"), Some("node"));
    }

    #[test]
    fn only_containers_are_standalone() {
        let mut t = ServiceTemplate::default();
        for n in ["a", "b"] {
            t.nodes.insert(n.into(), NodeTemplate::new(n, NodeKind::Container));
        }
        let c = classify_nodes(&t);
        assert!(c.hosting.is_empty());
        assert_eq!(c.standalone, vec!["a", "b"]);
    }

    #[test]
    fn chained_hosting_orders_by_depth() {
        let mut t = ServiceTemplate::default();
        t.nodes.insert("c1".into(), NodeTemplate::new("c1", NodeKind::Container));
        // Named so that lexicographic order alone would be wrong.
        t.nodes.insert("a_top".into(), NodeTemplate::new("a_top", NodeKind::Software));
        t.nodes.insert("z_base".into(), NodeTemplate::new("z_base", NodeKind::Software));
        t.relationships.push(RelationshipInstance::new(RelKind::HostedOn, "a_top", "z_base"));
        t.relationships.push(RelationshipInstance::new(RelKind::HostedOn, "z_base", "c1"));
        let c = classify_nodes(&t);
        assert_eq!(c.hosting["c1"], vec!["z_base", "a_top"]);
    }
}
