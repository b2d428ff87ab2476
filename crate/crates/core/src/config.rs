//! Toskose configuration: per hosting container unit settings plus the
//! manager block, with default completion.
//!
//! ```yaml
//! nodes:
//!   maven:
//!     alias: maven
//!     port: 9456
//!     user: user_21ty5
//!     password: 1t5mYp4ss
//!     log_level: INFO
//!     docker:
//!       name: giulen/thinking-maven-toskosed
//!       tag: 0.1.3
//! manager:
//!   alias: toskose-manager
//!   port: 12000
//!   user: admin_manager
//!   password: password_manager
//!   mode: production
//!   secret_key: my_secret
//!   docker:
//!     name: giulen/thinking-manager-toskosed
//!     tag: latest
//! ```

use indexmap::IndexMap;
use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::diagnostics::{Diagnostic, ValidationReport};
use crate::tosca::{classify_nodes, value_to_env, NodeKind, ServiceTemplate};

pub const DEFAULT_UNIT_PORT: u16 = 9001;
pub const DEFAULT_USER: &str = "admin";
pub const DEFAULT_PASSWORD: &str = "admin";
pub const DEFAULT_LOG_LEVEL: &str = "INFO";
pub const DEFAULT_MANAGER_ALIAS: &str = "toskose-manager";
pub const DEFAULT_MANAGER_PORT: u16 = 10000;
pub const DEFAULT_MODE: &str = "production";
pub const DEFAULT_SECRET_KEY: &str = "secret";
pub const DEFAULT_TAG: &str = "latest";

pub const LOG_LEVELS: [&str; 4] = ["DEBUG", "INFO", "WARNING", "ERROR"];
pub const MODES: [&str; 2] = ["production", "development"];

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{path}` must be {expected}")]
    TypeMismatch { path: String, expected: &'static str },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DockerConfig {
    pub name: Option<String>,
    pub tag: Option<String>,
    /// Empty values are read as absent.
    pub registry_password: Option<String>,
}

/// Unit settings for one hosting container; unset fields are filled by
/// [`complete_config`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeConfig {
    pub alias: Option<String>,
    pub port: Option<i64>,
    pub user: Option<String>,
    pub password: Option<String>,
    pub log_level: Option<String>,
    pub docker: DockerConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManagerConfig {
    pub alias: Option<String>,
    pub port: Option<i64>,
    pub user: Option<String>,
    pub password: Option<String>,
    pub mode: Option<String>,
    pub secret_key: Option<String>,
    pub docker: DockerConfig,
}

/// A possibly partial configuration as read from a file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ToskoseConfig {
    pub nodes: IndexMap<String, NodeConfig>,
    pub manager: Option<ManagerConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageSettings {
    pub name: String,
    pub tag: String,
    pub registry_password: Option<String>,
}

impl ImageSettings {
    pub fn reference(&self) -> String {
        format!("{}:{}", self.name, self.tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSettings {
    pub alias: String,
    pub port: u16,
    pub user: String,
    pub password: String,
    pub log_level: String,
    pub docker: ImageSettings,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManagerSettings {
    pub alias: String,
    pub port: u16,
    pub user: String,
    pub password: String,
    pub mode: String,
    pub secret_key: String,
    pub docker: ImageSettings,
}

impl ManagerSettings {
    pub fn is_development(&self) -> bool {
        self.mode == "development"
    }
}

/// Configuration with every field set; the form generation works from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompleteConfig {
    pub nodes: IndexMap<String, UnitSettings>,
    pub manager: ManagerSettings,
}

/// Inputs to default image naming.
#[derive(Debug, Clone, Default)]
pub struct CompletionDefaults {
    /// Application name, `thinking` in `thinking-maven-toskosed`.
    pub app_name: String,
    /// Registry owner prefix such as `giulen`; no prefix when unset.
    pub repository: Option<String>,
}

impl CompletionDefaults {
    pub fn for_template(t: &ServiceTemplate) -> Self {
        Self { app_name: t.app_name().to_owned(), repository: None }
    }

    pub fn with_repository(mut self, repository: Option<String>) -> Self {
        self.repository = repository.filter(|r| !r.is_empty());
        self
    }

    pub fn image_name(&self, container: &str) -> String {
        let base = if self.app_name.is_empty() {
            format!("{container}-toskosed")
        } else {
            format!("{}-{container}-toskosed", self.app_name)
        };
        match &self.repository {
            Some(repo) => format!("{}/{base}", repo.trim_end_matches('/')),
            None => base,
        }
    }
}

// ---------------------------------------------------------------- parsing

pub fn parse_config(document: &str) -> Result<ToskoseConfig, ConfigError> {
    let root: Value = if document.trim().is_empty() {
        Value::Null
    } else {
        serde_yaml::from_str(document).map_err(|e| ConfigError::Syntax(e.to_string()))?
    };
    let mut config = ToskoseConfig::default();
    let Some(root) = mapping(&root, "")? else {
        return Ok(config);
    };
    for (key, value) in root {
        match key_str(key, "")?.as_str() {
            "nodes" => {
                if let Some(nodes) = mapping(value, "nodes")? {
                    for (name, body) in nodes {
                        let name = key_str(name, "nodes")?;
                        let node = parse_node(&format!("nodes.{name}"), body)?;
                        config.nodes.insert(name, node);
                    }
                }
            }
            "manager" => config.manager = Some(parse_manager(value)?),
            other => return Err(ConfigError::UnknownKey(other.to_owned())),
        }
    }
    Ok(config)
}

fn parse_node(path: &str, value: &Value) -> Result<NodeConfig, ConfigError> {
    let mut node = NodeConfig::default();
    let Some(map) = mapping(value, path)? else {
        return Ok(node);
    };
    for (key, v) in map {
        let key = key_str(key, path)?;
        let at = format!("{path}.{key}");
        match key.as_str() {
            "alias" => node.alias = text(v, &at)?,
            "port" => node.port = integer(v, &at)?,
            "user" => node.user = text(v, &at)?,
            "password" => node.password = text(v, &at)?,
            "log_level" => node.log_level = text(v, &at)?,
            "docker" => node.docker = parse_docker(&at, v)?,
            _ => return Err(ConfigError::UnknownKey(at)),
        }
    }
    Ok(node)
}

fn parse_manager(value: &Value) -> Result<ManagerConfig, ConfigError> {
    let mut manager = ManagerConfig::default();
    let Some(map) = mapping(value, "manager")? else {
        return Ok(manager);
    };
    for (key, v) in map {
        let key = key_str(key, "manager")?;
        let at = format!("manager.{key}");
        match key.as_str() {
            "alias" => manager.alias = text(v, &at)?,
            "port" => manager.port = integer(v, &at)?,
            "user" => manager.user = text(v, &at)?,
            "password" => manager.password = text(v, &at)?,
            "mode" => manager.mode = text(v, &at)?,
            "secret_key" => manager.secret_key = text(v, &at)?,
            "docker" => manager.docker = parse_docker(&at, v)?,
            _ => return Err(ConfigError::UnknownKey(at)),
        }
    }
    Ok(manager)
}

fn parse_docker(path: &str, value: &Value) -> Result<DockerConfig, ConfigError> {
    let mut docker = DockerConfig::default();
    let Some(map) = mapping(value, path)? else {
        return Ok(docker);
    };
    for (key, v) in map {
        let key = key_str(key, path)?;
        let at = format!("{path}.{key}");
        match key.as_str() {
            "name" => docker.name = text(v, &at)?,
            "tag" => docker.tag = text(v, &at)?,
            "registry_password" => docker.registry_password = text(v, &at)?.filter(|p| !p.is_empty()),
            _ => return Err(ConfigError::UnknownKey(at)),
        }
    }
    Ok(docker)
}

fn mapping<'a>(value: &'a Value, path: &str) -> Result<Option<&'a Mapping>, ConfigError> {
    match value {
        Value::Null => Ok(None),
        Value::Mapping(m) => Ok(Some(m)),
        _ => Err(ConfigError::TypeMismatch {
            path: if path.is_empty() { "<root>".into() } else { path.into() },
            expected: "a mapping",
        }),
    }
}

fn key_str(key: &Value, path: &str) -> Result<String, ConfigError> {
    match key {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(ConfigError::TypeMismatch { path: path.to_owned(), expected: "keyed by names" }),
    }
}

/// Scalars are accepted as text so that tags like `2.0` survive.
fn text(value: &Value, path: &str) -> Result<Option<String>, ConfigError> {
    match value {
        Value::Null => Ok(None),
        Value::Sequence(_) | Value::Mapping(_) => {
            Err(ConfigError::TypeMismatch { path: path.to_owned(), expected: "text" })
        }
        v => Ok(value_to_env(v)),
    }
}

fn integer(value: &Value, path: &str) -> Result<Option<i64>, ConfigError> {
    match value {
        Value::Null => Ok(None),
        Value::Number(n) if n.is_i64() => Ok(n.as_i64()),
        _ => Err(ConfigError::TypeMismatch { path: path.to_owned(), expected: "an integer" }),
    }
}

// ------------------------------------------------------------- validation

/// Check a possibly partial configuration against a validated template.
///
/// Codes: `config-for-standalone`, `config-for-unknown`, `port-range`,
/// `alias-invalid`, `log-level`, `manager-mode`, `image-name`.
pub fn validate_config(c: &ToskoseConfig, t: &ServiceTemplate) -> ValidationReport {
    let mut report = ValidationReport::new();
    let classes = classify_nodes(t);

    for (name, node) in &c.nodes {
        let at = Some(name.as_str());
        if classes.is_standalone(name) {
            report.push(Diagnostic::error(
                "config-for-standalone",
                at,
                "standalone containers run their own image and take no unit settings",
            ));
        } else if !classes.is_hosting(name) {
            let what = match t.kind_of(name) {
                Some(NodeKind::Container) | None => "no container with this name",
                Some(kind) => {
                    report.push(Diagnostic::error(
                        "config-for-unknown",
                        at,
                        format!("`{name}` is a {kind} node, not a container"),
                    ));
                    continue;
                }
            };
            report.push(Diagnostic::error("config-for-unknown", at, what));
        }
        check_common(&mut report, at, node.port, node.alias.as_deref(), &node.docker);
        if let Some(level) = &node.log_level {
            if !LOG_LEVELS.contains(&level.as_str()) {
                report.push(Diagnostic::error(
                    "log-level",
                    at,
                    format!("log level `{level}` is not one of {}", LOG_LEVELS.join(", ")),
                ));
            }
        }
    }

    if let Some(m) = &c.manager {
        let at = Some("manager");
        check_common(&mut report, at, m.port, m.alias.as_deref(), &m.docker);
        if let Some(mode) = &m.mode {
            if !MODES.contains(&mode.as_str()) {
                report.push(Diagnostic::error(
                    "manager-mode",
                    at,
                    format!("mode `{mode}` is neither production nor development"),
                ));
            }
        }
    }
    report
}

fn check_common(
    report: &mut ValidationReport,
    at: Option<&str>,
    port: Option<i64>,
    alias: Option<&str>,
    docker: &DockerConfig,
) {
    if let Some(port) = port {
        if !(1..=65535).contains(&port) {
            report.push(Diagnostic::error("port-range", at, format!("port {port} is outside 1-65535")));
        }
    }
    if let Some(alias) = alias {
        if !is_dns_label(alias) {
            report.push(Diagnostic::error("alias-invalid", at, format!("alias `{alias}` is not a DNS label")));
        }
    }
    if docker.name.as_deref().is_some_and(|n| n.trim().is_empty()) {
        report.push(Diagnostic::error("image-name", at, "image name is empty"));
    }
}

pub fn is_dns_label(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 63
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}

/// Checks that only make sense once defaults are applied: every hosting
/// container has settings, a manager block exists and defaulted aliases are
/// usable.
///
/// Codes: `missing-manager`, `missing-node-config`, `alias-invalid`,
/// `alias-duplicate`, plus a `cleartext-password` warning in production.
pub fn validate_completed(c: &ToskoseConfig, t: &ServiceTemplate) -> ValidationReport {
    let mut report = validate_config(c, t);
    let classes = classify_nodes(t);
    for container in classes.hosting.keys() {
        match c.nodes.get(container) {
            None => report.push(Diagnostic::error(
                "missing-node-config",
                Some(container),
                "hosting container has no unit settings",
            )),
            Some(n)
                if n.alias.is_none()
                    || n.port.is_none()
                    || n.user.is_none()
                    || n.password.is_none()
                    || n.log_level.is_none()
                    || n.docker.name.is_none() =>
            {
                report.push(Diagnostic::error("missing-node-config", Some(container), "unit settings are incomplete"))
            }
            Some(_) => {}
        }
    }
    match &c.manager {
        None => report.push(Diagnostic::error("missing-manager", None, "the manager block is mandatory")),
        Some(m) => {
            if m.mode.as_deref() == Some("production") {
                report.push(Diagnostic::warning(
                    "cleartext-password",
                    Some("manager"),
                    "credentials are stored in clear text in production mode",
                ));
            }
        }
    }
    let mut seen: IndexMap<&str, &str> = IndexMap::new();
    let aliases = c
        .nodes
        .iter()
        .filter_map(|(n, cfg)| cfg.alias.as_deref().map(|a| (n.as_str(), a)))
        .chain(c.manager.iter().filter_map(|m| m.alias.as_deref().map(|a| ("manager", a))));
    for (owner, alias) in aliases {
        if let Some(first) = seen.insert(alias, owner) {
            report.push(Diagnostic::error(
                "alias-duplicate",
                Some(owner),
                format!("alias `{alias}` is already used by `{first}`"),
            ));
        }
    }
    report
}

// ------------------------------------------------------------- completion

/// Fill every unset field with its default. Provided values are never
/// changed; entries for hosting containers are added when missing.
pub fn complete_config(partial: &ToskoseConfig, t: &ServiceTemplate, defaults: &CompletionDefaults) -> ToskoseConfig {
    let classes = classify_nodes(t);
    let mut out = partial.clone();
    for container in classes.hosting.keys() {
        let node = out.nodes.entry(container.clone()).or_default();
        node.alias.get_or_insert_with(|| container.clone());
        node.port.get_or_insert(DEFAULT_UNIT_PORT.into());
        node.user.get_or_insert_with(|| DEFAULT_USER.into());
        node.password.get_or_insert_with(|| DEFAULT_PASSWORD.into());
        node.log_level.get_or_insert_with(|| DEFAULT_LOG_LEVEL.into());
        complete_docker(&mut node.docker, defaults.image_name(container));
    }
    let m = out.manager.get_or_insert_with(ManagerConfig::default);
    m.alias.get_or_insert_with(|| DEFAULT_MANAGER_ALIAS.into());
    m.port.get_or_insert(DEFAULT_MANAGER_PORT.into());
    m.user.get_or_insert_with(|| DEFAULT_USER.into());
    m.password.get_or_insert_with(|| DEFAULT_PASSWORD.into());
    m.mode.get_or_insert_with(|| DEFAULT_MODE.into());
    m.secret_key.get_or_insert_with(|| DEFAULT_SECRET_KEY.into());
    complete_docker(&mut m.docker, defaults.image_name("manager"));
    out
}

fn complete_docker(d: &mut DockerConfig, default_name: String) {
    d.name.get_or_insert(default_name);
    d.tag.get_or_insert_with(|| DEFAULT_TAG.into());
}

impl ToskoseConfig {
    /// Typed view of a completed configuration; `None` while any field is unset
    /// or a port is out of range.
    pub fn to_complete(&self) -> Option<CompleteConfig> {
        let image = |d: &DockerConfig| {
            Some(ImageSettings {
                name: d.name.clone()?,
                tag: d.tag.clone()?,
                registry_password: d.registry_password.clone(),
            })
        };
        let port = |p: Option<i64>| p.and_then(|p| u16::try_from(p).ok()).filter(|p| *p > 0);
        let mut nodes = IndexMap::new();
        for (name, n) in &self.nodes {
            nodes.insert(
                name.clone(),
                UnitSettings {
                    alias: n.alias.clone()?,
                    port: port(n.port)?,
                    user: n.user.clone()?,
                    password: n.password.clone()?,
                    log_level: n.log_level.clone()?,
                    docker: image(&n.docker)?,
                },
            );
        }
        let m = self.manager.as_ref()?;
        Some(CompleteConfig {
            nodes,
            manager: ManagerSettings {
                alias: m.alias.clone()?,
                port: port(m.port)?,
                user: m.user.clone()?,
                password: m.password.clone()?,
                mode: m.mode.clone()?,
                secret_key: m.secret_key.clone()?,
                docker: image(&m.docker)?,
            },
        })
    }

    /// Serialise in the file layout above. Unset fields are omitted, except
    /// `registry_password`, which is written empty once a docker block has a
    /// name (as completed files show it).
    pub fn to_yaml(&self) -> String {
        let mut root = Mapping::new();
        if !self.nodes.is_empty() {
            let mut nodes = Mapping::new();
            for (name, n) in &self.nodes {
                let mut m = Mapping::new();
                put(&mut m, "alias", n.alias.clone().map(Value::from));
                put(&mut m, "port", n.port.map(Value::from));
                put(&mut m, "user", n.user.clone().map(Value::from));
                put(&mut m, "password", n.password.clone().map(Value::from));
                put(&mut m, "log_level", n.log_level.clone().map(Value::from));
                put(&mut m, "docker", docker_yaml(&n.docker));
                nodes.insert(name.clone().into(), Value::Mapping(m));
            }
            root.insert("nodes".into(), Value::Mapping(nodes));
        }
        if let Some(mg) = &self.manager {
            let mut m = Mapping::new();
            put(&mut m, "alias", mg.alias.clone().map(Value::from));
            put(&mut m, "port", mg.port.map(Value::from));
            put(&mut m, "user", mg.user.clone().map(Value::from));
            put(&mut m, "password", mg.password.clone().map(Value::from));
            put(&mut m, "mode", mg.mode.clone().map(Value::from));
            put(&mut m, "secret_key", mg.secret_key.clone().map(Value::from));
            put(&mut m, "docker", docker_yaml(&mg.docker));
            root.insert("manager".into(), Value::Mapping(m));
        }
        if root.is_empty() {
            return String::new();
        }
        serde_yaml::to_string(&Value::Mapping(root)).expect("plain mapping serialises")
    }
}

fn put(m: &mut Mapping, key: &str, value: Option<Value>) {
    if let Some(v) = value {
        m.insert(key.into(), v);
    }
}

fn docker_yaml(d: &DockerConfig) -> Option<Value> {
    if *d == DockerConfig::default() {
        return None;
    }
    let mut m = Mapping::new();
    put(&mut m, "name", d.name.clone().map(Value::from));
    put(&mut m, "tag", d.tag.clone().map(Value::from));
    if d.name.is_some() {
        m.insert("registry_password".into(), d.registry_password.clone().map_or(Value::Null, Value::from));
    }
    Some(Value::Mapping(m))
}
