use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use super::model::{AppModel, ComponentModel, ContainerModel, Endpoint};
use crate::packager::program_name;
use crate::unit::{faults, ClientError, ProcessInfo, ProcessState, UnitClient};

pub const PROTOCOL_XMLRPC: &str = "xmlrpc";
pub const DEFAULT_OPERATION_TIMEOUT: Duration = Duration::from_secs(120);
pub const LIVENESS_TTL: Duration = Duration::from_secs(2);
/// Exit codes the generated unit configurations accept.
pub const SUCCESS_EXIT_CODES: [i32; 1] = [0];

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no client for protocol `{0}`")]
pub struct UnknownProtocol(pub String);

/// Build a unit client for a protocol tag. Only XML-RPC exists today.
pub fn client_for(protocol: &str, endpoint: &str, user: &str, password: &str) -> Result<UnitClient, UnknownProtocol> {
    match protocol {
        PROTOCOL_XMLRPC => Ok(UnitClient::new(endpoint, user, password)),
        other => Err(UnknownProtocol(other.to_owned())),
    }
}

/// Maps unit aliases to reachable `host:port` endpoints.
#[derive(Debug, Clone, Default)]
pub struct AliasTable(pub HashMap<String, String>);

impl AliasTable {
    /// Without an entry the alias is used as a host name, as on an overlay network.
    pub fn resolve(&self, endpoint: &Endpoint) -> String {
        self.0.get(&endpoint.alias).cloned().unwrap_or_else(|| format!("{}:{}", endpoint.alias, endpoint.port))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComponentState {
    NotCreated,
    Created,
    Configured,
    Running,
    Stopped,
}

impl ComponentState {
    /// The state a successful operation leads to; `None` leaves it unchanged.
    pub fn after(operation: &str) -> Option<Self> {
        Some(match operation {
            "create" => ComponentState::Created,
            "configure" => ComponentState::Configured,
            "start" => ComponentState::Running,
            "stop" => ComponentState::Stopped,
            "delete" => ComponentState::NotCreated,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Failed,
    Timeout,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperationResult {
    pub container: String,
    pub component: String,
    pub operation: String,
    pub outcome: Outcome,
    pub exit_status: Option<i32>,
    pub final_program_state: Option<ProcessState>,
    pub duration: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub message: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServiceError {
    #[error("unknown container `{0}`")]
    UnknownContainer(String),
    #[error("unknown component `{1}` in `{0}`")]
    UnknownComponent(String, String),
    #[error("`{2}` is not an operation of `{1}`")]
    UnknownOperation(String, String, String),
    #[error("an operation on `{1}` is already in flight")]
    Busy(String, String),
    #[error("unit of `{0}` unreachable: {1}")]
    Unreachable(String, String),
    #[error("{0}")]
    Unit(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentSummary {
    pub name: String,
    pub derived_state: ComponentState,
    pub operations: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContainerSummary {
    pub name: String,
    pub standalone: bool,
    pub alias: Option<String>,
    /// `None` for standalone containers, which have no unit.
    pub unit_alive: Option<bool>,
    pub components: Vec<ComponentSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentDetail {
    pub container: String,
    pub name: String,
    pub derived_state: ComponentState,
    pub operations: Vec<String>,
    pub unit_alive: bool,
    /// Operation → program state, when the unit answered.
    pub programs: Option<HashMap<String, ProcessState>>,
}

type Key = (String, String);

/// Routes lifecycle requests to units and keeps the advisory component states.
pub struct ManagerService {
    model: Arc<AppModel>,
    aliases: AliasTable,
    protocol: String,
    operation_timeout: Duration,
    poll_interval: Duration,
    derived: Mutex<HashMap<Key, ComponentState>>,
    in_flight: Mutex<HashSet<Key>>,
    liveness: Mutex<HashMap<String, Probe>>,
}

/// When a unit was last asked, and what it answered.
type Probe = (Instant, Option<Vec<ProcessInfo>>);

struct InFlight<'a> {
    set: &'a Mutex<HashSet<Key>>,
    key: Key,
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.set.lock().unwrap().remove(&self.key);
    }
}

impl ManagerService {
    pub fn new(model: AppModel, aliases: AliasTable) -> Self {
        Self {
            model: Arc::new(model),
            aliases,
            protocol: PROTOCOL_XMLRPC.to_owned(),
            operation_timeout: DEFAULT_OPERATION_TIMEOUT,
            poll_interval: Duration::from_millis(100),
            derived: Mutex::new(HashMap::new()),
            in_flight: Mutex::new(HashSet::new()),
            liveness: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_operation_timeout(mut self, timeout: Duration) -> Self {
        self.operation_timeout = timeout;
        self
    }

    pub fn model(&self) -> &AppModel {
        &self.model
    }

    fn container(&self, name: &str) -> Result<(&ContainerModel, &Endpoint), ServiceError> {
        let c = self.model.container(name).ok_or_else(|| ServiceError::UnknownContainer(name.to_owned()))?;
        let endpoint =
            c.endpoint.as_ref().ok_or_else(|| ServiceError::UnknownComponent(name.to_owned(), String::new()))?;
        Ok((c, endpoint))
    }

    fn component(&self, container: &str, component: &str) -> Result<&ComponentModel, ServiceError> {
        if self.model.container(container).is_none() {
            return Err(ServiceError::UnknownContainer(container.to_owned()));
        }
        self.model
            .component(container, component)
            .ok_or_else(|| ServiceError::UnknownComponent(container.to_owned(), component.to_owned()))
    }

    pub fn client(&self, container: &str) -> Result<UnitClient, ServiceError> {
        let (_, endpoint) = self.container(container)?;
        client_for(&self.protocol, &self.aliases.resolve(endpoint), &endpoint.user, &endpoint.password)
            .map_err(|e| ServiceError::Unit(e.to_string()))
    }

    /// Program table of a unit, probed at most every [`LIVENESS_TTL`]. `None` when unreachable.
    async fn probe(&self, container: &str) -> Option<Vec<ProcessInfo>> {
        if let Some((at, cached)) = self.liveness.lock().unwrap().get(container) {
            if at.elapsed() < LIVENESS_TTL {
                return cached.clone();
            }
        }
        let client = self.client(container).ok()?;
        let probed =
            tokio::time::timeout(Duration::from_secs(3), client.get_all_process_info()).await.ok().and_then(Result::ok);
        self.liveness.lock().unwrap().insert(container.to_owned(), (Instant::now(), probed.clone()));
        probed
    }

    fn forget_probe(&self, container: &str) {
        self.liveness.lock().unwrap().remove(container);
    }

    /// Stored state, overridden by a running `start` program seen on the unit.
    fn derived_state(&self, c: &ComponentModel, programs: Option<&[ProcessInfo]>) -> ComponentState {
        let key = (c.container.clone(), c.name.clone());
        let mut derived = self.derived.lock().unwrap();
        let start = program_name(&c.name, "start");
        let running = programs.is_some_and(|ps| ps.iter().any(|p| p.name == start && p.state == ProcessState::Running));
        if running {
            derived.insert(key.clone(), ComponentState::Running);
        }
        derived.get(&key).copied().unwrap_or(ComponentState::NotCreated)
    }

    pub async fn list_nodes(&self) -> Vec<ContainerSummary> {
        let mut out = Vec::new();
        for c in self.model.containers.values() {
            let programs = match c.standalone {
                true => None,
                false => self.probe(&c.name).await,
            };
            let components = c
                .components
                .iter()
                .filter_map(|name| self.model.component(&c.name, name))
                .map(|comp| ComponentSummary {
                    name: comp.name.clone(),
                    derived_state: self.derived_state(comp, programs.as_deref()),
                    operations: comp.operations.clone(),
                })
                .collect();
            out.push(ContainerSummary {
                name: c.name.clone(),
                standalone: c.standalone,
                alias: c.endpoint.as_ref().map(|e| e.alias.clone()),
                unit_alive: (!c.standalone).then_some(programs.is_some()),
                components,
            });
        }
        out
    }

    pub async fn get_node(&self, container: &str) -> Result<ContainerSummary, ServiceError> {
        self.list_nodes()
            .await
            .into_iter()
            .find(|c| c.name == container)
            .ok_or_else(|| ServiceError::UnknownContainer(container.to_owned()))
    }

    pub async fn get_component(&self, container: &str, component: &str) -> Result<ComponentDetail, ServiceError> {
        let comp = self.component(container, component)?;
        let programs = self.probe(container).await;
        let table = programs.as_ref().map(|ps| {
            comp.operations
                .iter()
                .filter_map(|op| {
                    let name = program_name(&comp.name, op);
                    ps.iter().find(|p| p.name == name).map(|p| (op.clone(), p.state))
                })
                .collect()
        });
        Ok(ComponentDetail {
            container: container.to_owned(),
            name: component.to_owned(),
            derived_state: self.derived_state(comp, programs.as_deref()),
            operations: comp.operations.clone(),
            unit_alive: programs.is_some(),
            programs: table,
        })
    }

    /// Run one lifecycle operation and wait for it to settle.
    pub async fn execute_operation(
        &self,
        container: &str,
        component: &str,
        operation: &str,
    ) -> Result<OperationResult, ServiceError> {
        let comp = self.component(container, component)?;
        if !comp.has_operation(operation) {
            return Err(ServiceError::UnknownOperation(
                container.to_owned(),
                component.to_owned(),
                operation.to_owned(),
            ));
        }
        let key = (container.to_owned(), component.to_owned());
        if !self.in_flight.lock().unwrap().insert(key.clone()) {
            return Err(ServiceError::Busy(container.to_owned(), component.to_owned()));
        }
        let _guard = InFlight { set: &self.in_flight, key: key.clone() };

        let client = self.client(container)?;
        let began = Instant::now();
        info!(container, component, operation, "operation requested");
        let settled = tokio::time::timeout(self.operation_timeout, self.run_operation(&client, comp, operation)).await;
        self.forget_probe(container);

        let mut result = OperationResult {
            container: container.to_owned(),
            component: component.to_owned(),
            operation: operation.to_owned(),
            outcome: Outcome::Timeout,
            exit_status: None,
            final_program_state: None,
            duration: 0.0,
            message: String::new(),
        };
        match settled {
            Err(_) => result.message = format!("no outcome within {:?}", self.operation_timeout),
            Ok(Err(OpError::Unreachable(msg))) => {
                result.outcome = Outcome::Unreachable;
                result.message = msg;
            }
            Ok(Err(OpError::Busy)) => {
                return Err(ServiceError::Busy(container.to_owned(), component.to_owned()));
            }
            Ok(Err(OpError::Failed(msg, info))) => {
                result.outcome = Outcome::Failed;
                result.message = msg;
                result.final_program_state = info.as_ref().map(|i| i.state);
                result.exit_status = info.and_then(|i| i.exitstatus);
            }
            Ok(Ok(info)) => {
                result.outcome = Outcome::Success;
                result.final_program_state = Some(info.state);
                result.exit_status = info.exitstatus;
                if let Some(state) = ComponentState::after(operation) {
                    self.derived.lock().unwrap().insert(key, state);
                }
            }
        }
        result.duration = began.elapsed().as_secs_f64();
        if result.outcome != Outcome::Success {
            warn!(container, component, operation, outcome = ?result.outcome, "{}", result.message);
        }
        Ok(result)
    }

    async fn run_operation(
        &self,
        client: &UnitClient,
        comp: &ComponentModel,
        operation: &str,
    ) -> Result<ProcessInfo, OpError> {
        let program = program_name(&comp.name, operation);
        if operation == "stop" {
            let start = program_name(&comp.name, "start");
            match client.stop_process(&start, true).await {
                Ok(_) => {}
                Err(e) if e.fault_code() == Some(faults::NOT_RUNNING) => {}
                Err(e) => return Err(OpError::from_client(e)),
            }
            let stopped = client.get_process_info(&start).await.map_err(OpError::from_client)?;
            return match self.run_one_shot(client, &program).await {
                Ok(_) => Ok(stopped),
                Err(e) => Err(e),
            };
        }
        if operation == "start" {
            client.start_process(&program, true).await.map_err(|e| self.start_error(e))?;
            let info = client.get_process_info(&program).await.map_err(OpError::from_client)?;
            return match info.state {
                ProcessState::Running => Ok(info),
                ProcessState::Exited if info.exitstatus.is_some_and(|c| SUCCESS_EXIT_CODES.contains(&c)) => Ok(info),
                _ => Err(OpError::Failed(format!("{program} is {}", info.state), Some(info))),
            };
        }
        self.run_one_shot(client, &program).await
    }

    /// Start a program that is expected to exit, then poll until it does.
    async fn run_one_shot(&self, client: &UnitClient, program: &str) -> Result<ProcessInfo, OpError> {
        client.start_process(program, true).await.map_err(|e| self.start_error(e))?;
        loop {
            let info = client.get_process_info(program).await.map_err(OpError::from_client)?;
            match info.state {
                ProcessState::Exited => {
                    return match info.exitstatus {
                        Some(c) if SUCCESS_EXIT_CODES.contains(&c) => Ok(info),
                        _ => Err(OpError::Failed(format!("{program} exited with {:?}", info.exitstatus), Some(info))),
                    };
                }
                ProcessState::Fatal | ProcessState::Stopped => {
                    return Err(OpError::Failed(format!("{program} is {}", info.state), Some(info)));
                }
                _ => tokio::time::sleep(self.poll_interval).await,
            }
        }
    }

    fn start_error(&self, e: ClientError) -> OpError {
        match e.fault_code() {
            Some(faults::ALREADY_STARTED) => OpError::Busy,
            _ => OpError::from_client(e),
        }
    }

    /// Proxy a slice of a program's stdout log; `operation` defaults to `start`.
    pub async fn get_component_logs(
        &self,
        container: &str,
        component: &str,
        operation: Option<&str>,
        offset: u64,
        length: u64,
    ) -> Result<String, ServiceError> {
        let comp = self.component(container, component)?;
        let operation = operation.unwrap_or("start");
        if !comp.has_operation(operation) {
            return Err(ServiceError::UnknownOperation(
                container.to_owned(),
                component.to_owned(),
                operation.to_owned(),
            ));
        }
        let client = self.client(container)?;
        client.read_stdout_log(&program_name(component, operation), offset, length).await.map_err(|e| match e {
            ClientError::Fault(f) => ServiceError::Unit(f.message),
            other => ServiceError::Unreachable(container.to_owned(), other.to_string()),
        })
    }
}

enum OpError {
    Unreachable(String),
    Busy,
    Failed(String, Option<ProcessInfo>),
}

impl OpError {
    fn from_client(e: ClientError) -> Self {
        match e {
            ClientError::Fault(f) => OpError::Failed(f.message, None),
            other => OpError::Unreachable(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factory_knows_only_xmlrpc() {
        assert!(client_for("xmlrpc", "a:1", "u", "p").is_ok());
        assert_eq!(client_for("grpc", "a:1", "u", "p").unwrap_err(), UnknownProtocol("grpc".into()));
    }

    #[test]
    fn alias_table_falls_back_to_dns_name() {
        let e = Endpoint { alias: "maven".into(), port: 9456, user: "u".into(), password: "p".into() };
        assert_eq!(AliasTable::default().resolve(&e), "maven:9456");
        let t = AliasTable([("maven".to_string(), "127.0.0.1:4000".to_string())].into());
        assert_eq!(t.resolve(&e), "127.0.0.1:4000");
    }

    #[test]
    fn derived_states() {
        assert_eq!(ComponentState::after("configure"), Some(ComponentState::Configured));
        assert_eq!(ComponentState::after("delete"), Some(ComponentState::NotCreated));
        assert_eq!(ComponentState::after("push_default"), None);
    }
}
