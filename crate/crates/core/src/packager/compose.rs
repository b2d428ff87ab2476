use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::enrich::{EnrichedModel, MANAGER_SERVICE};
use crate::tosca::{value_to_env, NodeKind, RelKind, Value};

pub const COMPOSE_VERSION: &str = "3.7";
pub const NETWORK: &str = "toskose-network";

/// A Compose v3.7 document, fields in emission order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeModel {
    pub version: String,
    pub services: IndexMap<String, ServiceSpec>,
    pub networks: IndexMap<String, NetworkSpec>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub volumes: IndexMap<String, Option<Value>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub image: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub init: bool,
    #[serde(default)]
    pub networks: IndexMap<String, ServiceNetwork>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub volumes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub environment: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ports: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceNetwork {
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub driver: String,
    pub attachable: bool,
}

impl ServiceSpec {
    pub fn env(&self, name: &str) -> Option<&str> {
        self.environment.iter().find_map(|e| {
            let (k, v) = e.split_once('=')?;
            (k == name).then_some(v)
        })
    }

    pub fn env_pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.environment.iter().map(|e| e.split_once('=').unwrap_or((e.as_str(), "")))
    }

    pub fn aliases(&self) -> &[String] {
        self.networks.get(NETWORK).map(|n| n.aliases.as_slice()).unwrap_or_default()
    }
}

impl ComposeModel {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("compose model serialises")
    }

    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }
}

/// Assemble the Compose document: containers in template order, then the manager.
pub fn generate_compose(m: &EnrichedModel) -> ComposeModel {
    let t = &m.template;
    let mut services = IndexMap::new();
    let mut volumes = IndexMap::new();

    for node in t.nodes_of(NodeKind::Container) {
        let mut spec = ServiceSpec {
            image: m.images[&node.name].target_image.clone(),
            init: m.is_hosting(&node.name),
            networks: network(m.alias_of(&node.name).unwrap_or(&node.name)),
            volumes: Vec::new(),
            environment: env_list(&m.environment[&node.name]),
            ports: ports(node.properties.get("ports")),
            command: (!m.is_hosting(&node.name)).then(|| node.properties.get("command").cloned()).flatten(),
        };
        for rel in t.outgoing(&node.name).filter(|r| r.kind == RelKind::AttachesTo) {
            if let Some(location) = &rel.location {
                spec.volumes.push(format!("{}:{location}", rel.target));
                volumes.insert(rel.target.clone(), None);
            }
        }
        spec.volumes.extend(bind_mounts(node.properties.get("share_data")));
        services.insert(node.name.clone(), spec);
    }

    let port = m.config.manager.port;
    services.insert(
        MANAGER_SERVICE.to_owned(),
        ServiceSpec {
            image: m.images[MANAGER_SERVICE].target_image.clone(),
            init: true,
            networks: network(&m.config.manager.alias),
            volumes: Vec::new(),
            environment: env_list(&m.environment[MANAGER_SERVICE]),
            ports: vec![format!("{port}:{port}/tcp")],
            command: None,
        },
    );

    let mut networks = IndexMap::new();
    networks.insert(NETWORK.to_owned(), NetworkSpec { driver: "overlay".into(), attachable: true });
    ComposeModel { version: COMPOSE_VERSION.into(), services, networks, volumes }
}

fn network(alias: &str) -> IndexMap<String, ServiceNetwork> {
    let mut n = IndexMap::new();
    n.insert(NETWORK.to_owned(), ServiceNetwork { aliases: vec![alias.to_owned()] });
    n
}

fn env_list(env: &IndexMap<String, String>) -> Vec<String> {
    env.iter().map(|(k, v)| format!("{k}={v}")).collect()
}

/// TosKer maps container ports to host ports: `{3000: 8080}` → `8080:3000/tcp`.
fn ports(value: Option<&Value>) -> Vec<String> {
    match value {
        Some(Value::Mapping(map)) => map
            .iter()
            .filter_map(|(c, h)| {
                let container = value_to_env(c)?;
                let host = value_to_env(h)?;
                let (cport, proto) = container.split_once('/').unwrap_or((&container, "tcp"));
                Some(format!("{host}:{cport}/{proto}"))
            })
            .collect(),
        Some(Value::Sequence(seq)) => seq.iter().filter_map(value_to_env).collect(),
        _ => Vec::new(),
    }
}

/// `share_data` as `{container_path: host_path}` or literal `host:container` entries.
fn bind_mounts(value: Option<&Value>) -> Vec<String> {
    match value {
        Some(Value::Mapping(map)) => {
            map.iter().filter_map(|(c, h)| Some(format!("{}:{}", value_to_env(h)?, value_to_env(c)?))).collect()
        }
        Some(Value::Sequence(seq)) => seq.iter().filter_map(value_to_env).collect(),
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{complete_config, parse_config, CompletionDefaults};
    use crate::packager::{enrich_model, BaseImages};
    use crate::tosca::parse_service_template;

    fn compose() -> ComposeModel {
        let t = parse_service_template(include_str!("../../fixtures/thinking/csar/thinking.yaml")).unwrap();
        let partial = parse_config(include_str!("../../fixtures/thinking/toskose.yml")).unwrap();
        let c = complete_config(&partial, &t, &CompletionDefaults::for_template(&t));
        generate_compose(&enrich_model(&t, &c.to_complete().unwrap(), &BaseImages::default()))
    }

    #[test]
    fn thinking_services() {
        let c = compose();
        assert_eq!(c.services.keys().collect::<Vec<_>>(), ["maven", "node", "mongodb", "toskose-manager"]);
        assert_eq!(c.services["node"].ports, ["8080:3000/tcp"]);
        assert_eq!(c.services["node"].env("INPUT_APIPORT"), Some("8000"));
        assert_eq!(c.services["mongodb"].volumes, ["dbvolume:/data/db"]);
        assert!(!c.services["mongodb"].init);
        assert_eq!(c.services["toskose-manager"].ports, ["12000:12000/tcp"]);
        assert_eq!(c.volumes.keys().collect::<Vec<_>>(), ["dbvolume"]);
    }

    #[test]
    fn serialization_is_deterministic_and_parses_back() {
        let a = compose().to_yaml();
        assert_eq!(a, compose().to_yaml());
        assert_eq!(ComposeModel::from_yaml(&a).unwrap(), compose());
        let maven = a.find("  maven:").unwrap();
        let image = a[maven..].find("image:").unwrap();
        let init = a[maven..].find("init:").unwrap();
        let env = a[maven..].find("environment:").unwrap();
        let ports = a[maven..].find("ports:").unwrap();
        assert!(image < init && init < env && env < ports);
    }
}
