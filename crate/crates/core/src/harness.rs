//! Local stand-in for a container orchestrator: runs the units, the manager
//! and stubs for standalone containers as plain processes in sandbox
//! directories, with an alias table in place of overlay-network DNS.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Read};
use std::net::{TcpListener, TcpStream};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use nix::sys::signal::{kill, Signal};
use nix::unistd::Pid;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::manager::{ENV_ALIAS_TABLE, ENV_PORT};
use crate::packager::{layout, ComposeModel, COMPOSE_FILE, CONTEXTS_DIR, MANAGER_SERVICE};

pub const MANIFEST_FILE: &str = "harness.yml";
pub const STATE_FILE: &str = "harness-state.json";
pub const READINESS_TIMEOUT: Duration = Duration::from_secs(15);
/// How long teardown waits for a process after SIGTERM before killing it.
pub const TEARDOWN_GRACE: Duration = Duration::from_secs(15);
pub const DEFAULT_STUB: &str = "{toskose} harness stub --port {port}";

const UNIT_LOG: &str = "process.log";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad {file}: {message}")]
    Document { file: String, message: String },
    #[error("no free local port: {0}")]
    PortExhausted(io::Error),
    #[error("`{service}` failed to start:\n{output}")]
    UnitFailedToStart { service: String, output: String },
    #[error("`{0}` did not accept connections within the readiness timeout")]
    NotReady(String),
    #[error("unknown alias `{0}`")]
    UnknownAlias(String),
    #[error("bad stub command for `{service}`: {command}")]
    BadStub { service: String, command: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubSpec {
    /// Shell-style command; `{toskose}` and `{port}` are substituted.
    pub command: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessManifest {
    #[serde(default)]
    pub stubs: IndexMap<String, StubSpec>,
}

impl HarnessManifest {
    pub fn from_yaml(text: &str) -> Result<Self, HarnessError> {
        serde_yaml::from_str(text)
            .map_err(|e| HarnessError::Document { file: MANIFEST_FILE.into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone)]
pub struct HarnessOptions {
    /// Executable providing the `unit`, `manager` and `harness stub` commands.
    pub toskose: PathBuf,
    /// Sandbox parent; a fresh temporary directory when unset.
    pub sandbox_root: Option<PathBuf>,
    pub manifest: HarnessManifest,
    pub readiness_timeout: Duration,
}

impl HarnessOptions {
    pub fn new(toskose: impl Into<PathBuf>) -> Self {
        Self {
            toskose: toskose.into(),
            sandbox_root: None,
            manifest: HarnessManifest::default(),
            readiness_timeout: READINESS_TIMEOUT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    Unit,
    Manager,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchedService {
    pub name: String,
    pub kind: ServiceKind,
    pub pid: u32,
    pub port: u16,
    pub sandbox: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentState {
    pub root: PathBuf,
    /// Launch order; teardown walks it backwards.
    pub services: Vec<LaunchedService>,
    pub alias_table: BTreeMap<String, String>,
}

/// A running local deployment. Dropping it tears everything down.
#[derive(Debug)]
pub struct HarnessDeployment {
    pub state: DeploymentState,
    children: Vec<Option<Child>>,
    torn_down: bool,
}

/// Remap `/toskose/...` container paths into a sandbox.
pub fn rewrite_paths(text: &str, sandbox: &Path) -> String {
    text.replace(&format!("{}/", layout::ROOT), &format!("{}/", sandbox.display()))
}

fn free_ports(n: usize) -> Result<Vec<u16>, HarnessError> {
    // Hold every listener until all are chosen so the ports are distinct.
    let listeners = (0..n)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<io::Result<Vec<_>>>()
        .map_err(HarnessError::PortExhausted)?;
    listeners.iter().map(|l| Ok(l.local_addr().map_err(HarnessError::PortExhausted)?.port())).collect()
}

fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    fs::create_dir_all(to)?;
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &target)?;
        } else {
            fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

fn tail(path: &Path) -> String {
    let mut text = String::new();
    if let Ok(mut f) = File::open(path) {
        let _ = f.read_to_string(&mut text);
    }
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(40)..].join("\n")
}

struct Plan {
    name: String,
    kind: ServiceKind,
    port: u16,
    sandbox: PathBuf,
    command: Vec<String>,
    env: Vec<(String, String)>,
}

fn prepare_unit(ctx: &Path, sandbox: &Path) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(sandbox.join("logs"))?;
    for entry in fs::read_dir(ctx)? {
        let entry = entry?;
        let name = entry.file_name();
        if entry.file_type()?.is_dir() {
            copy_tree(&entry.path(), &sandbox.join("apps").join(&name))?;
        }
    }
    let conf = fs::read_to_string(ctx.join(layout::CONTEXT_UNIT_CONFIG))?;
    let path = sandbox.join(layout::CONTEXT_UNIT_CONFIG);
    fs::write(&path, rewrite_paths(&conf, sandbox))?;
    Ok(path)
}

fn prepare_manager(ctx: &Path, sandbox: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    let dir = sandbox.join("manager");
    fs::create_dir_all(&dir)?;
    let template = dir.join(layout::CONTEXT_TEMPLATE);
    let config = dir.join(layout::CONTEXT_CONFIG);
    fs::copy(ctx.join(layout::CONTEXT_TEMPLATE), &template)?;
    fs::copy(ctx.join(layout::CONTEXT_CONFIG), &config)?;
    Ok((template, config))
}

fn stub_command(service: &str, spec: &str, toskose: &Path, port: u16) -> Result<Vec<String>, HarnessError> {
    let bad = || HarnessError::BadStub { service: service.into(), command: spec.into() };
    let words = shlex::split(spec).filter(|w| !w.is_empty()).ok_or_else(bad)?;
    Ok(words
        .into_iter()
        .map(|w| w.replace("{toskose}", &toskose.display().to_string()).replace("{port}", &port.to_string()))
        .collect())
}

fn read_compose(artifacts: &Path) -> Result<ComposeModel, HarnessError> {
    let text = fs::read_to_string(artifacts.join(COMPOSE_FILE))?;
    ComposeModel::from_yaml(&text)
        .map_err(|e| HarnessError::Document { file: COMPOSE_FILE.into(), message: e.to_string() })
}

/// Launch every service of a packaged application and wait until all listeners accept connections.
pub fn launch_local(artifacts: &Path, options: &HarnessOptions) -> Result<HarnessDeployment, HarnessError> {
    let compose = read_compose(artifacts)?;
    let contexts = artifacts.join(CONTEXTS_DIR);
    let root = match &options.sandbox_root {
        Some(r) => {
            fs::create_dir_all(r)?;
            r.clone()
        }
        None => tempfile::Builder::new().prefix("toskose-harness-").tempdir()?.keep(),
    };
    let ports = free_ports(compose.services.len())?;

    let mut alias_table = BTreeMap::new();
    for ((name, svc), port) in compose.services.iter().zip(&ports) {
        let endpoint = format!("127.0.0.1:{port}");
        alias_table.insert(name.clone(), endpoint.clone());
        for alias in svc.aliases() {
            alias_table.insert(alias.to_string(), endpoint.clone());
        }
    }
    let alias_file = root.join("alias-table.json");
    fs::write(&alias_file, serde_json::to_string_pretty(&alias_table).expect("string map"))?;

    let exe = options.toskose.display().to_string();
    let mut plans = Vec::new();
    for ((name, svc), &port) in compose.services.iter().zip(&ports) {
        let sandbox = root.join(name);
        fs::create_dir_all(&sandbox)?;
        let ctx = contexts.join(name);
        let mut env: Vec<(String, String)> =
            svc.env_pairs().map(|(k, v)| (k.to_owned(), rewrite_paths(v, &sandbox))).collect();
        let set = |env: &mut Vec<(String, String)>, key: &str, value: String| {
            env.retain(|(k, _)| k != key);
            env.push((key.to_owned(), value));
        };
        let (kind, command) = if name == MANAGER_SERVICE {
            let (template, config) = prepare_manager(&ctx, &sandbox)?;
            set(&mut env, ENV_PORT, port.to_string());
            set(&mut env, ENV_ALIAS_TABLE, alias_file.display().to_string());
            let cmd = vec![
                exe.clone(),
                "manager".into(),
                "--template".into(),
                template.display().to_string(),
                "--config".into(),
                config.display().to_string(),
            ];
            (ServiceKind::Manager, cmd)
        } else if ctx.join(layout::CONTEXT_UNIT_CONFIG).is_file() {
            let conf = prepare_unit(&ctx, &sandbox)?;
            set(&mut env, "SUPERVISORD_PORT", port.to_string());
            let cmd = vec![exe.clone(), "unit".into(), "--config".into(), conf.display().to_string()];
            (ServiceKind::Unit, cmd)
        } else {
            let spec = options.manifest.stubs.get(name).map(|s| s.command.as_str()).unwrap_or(DEFAULT_STUB);
            (ServiceKind::Stub, stub_command(name, spec, &options.toskose, port)?)
        };
        plans.push(Plan { name: name.clone(), kind, port, sandbox, command, env });
    }

    let mut deployment = HarnessDeployment {
        state: DeploymentState { root, services: Vec::new(), alias_table },
        children: Vec::new(),
        torn_down: false,
    };
    for plan in &plans {
        if let Err(e) = deployment.spawn(plan) {
            deployment.teardown();
            return Err(e);
        }
    }
    if let Err(e) = deployment.wait_ready(options.readiness_timeout) {
        deployment.teardown();
        return Err(e);
    }
    info!(services = deployment.state.services.len(), "deployment ready");
    Ok(deployment)
}

impl HarnessDeployment {
    fn spawn(&mut self, plan: &Plan) -> Result<(), HarnessError> {
        let log = File::create(plan.sandbox.join(UNIT_LOG))?;
        let child = Command::new(&plan.command[0])
            .args(&plan.command[1..])
            .envs(plan.env.iter().map(|(k, v)| (k, v)))
            .current_dir(&plan.sandbox)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0)
            .spawn()
            .map_err(|e| HarnessError::UnitFailedToStart { service: plan.name.clone(), output: e.to_string() })?;
        info!(service = %plan.name, kind = ?plan.kind, pid = child.id(), port = plan.port, "launched");
        self.state.services.push(LaunchedService {
            name: plan.name.clone(),
            kind: plan.kind,
            pid: child.id(),
            port: plan.port,
            sandbox: plan.sandbox.clone(),
        });
        self.children.push(Some(child));
        Ok(())
    }

    fn wait_ready(&mut self, timeout: Duration) -> Result<(), HarnessError> {
        let deadline = Instant::now() + timeout;
        let mut pending: Vec<usize> = (0..self.state.services.len()).collect();
        while !pending.is_empty() {
            let mut still = Vec::new();
            for i in pending {
                let svc = &self.state.services[i];
                if let Some(Some(child)) = self.children.get_mut(i) {
                    if let Ok(Some(status)) = child.try_wait() {
                        return Err(HarnessError::UnitFailedToStart {
                            service: svc.name.clone(),
                            output: format!("{status}\n{}", tail(&svc.sandbox.join(UNIT_LOG))),
                        });
                    }
                }
                let addr = ([127, 0, 0, 1], svc.port).into();
                if TcpStream::connect_timeout(&addr, Duration::from_millis(200)).is_err() {
                    still.push(i);
                }
            }
            pending = still;
            if pending.is_empty() {
                break;
            }
            if Instant::now() >= deadline {
                return Err(HarnessError::NotReady(self.state.services[pending[0]].name.clone()));
            }
            thread::sleep(Duration::from_millis(50));
        }
        Ok(())
    }

    pub fn resolve_alias(&self, alias: &str) -> Result<&str, HarnessError> {
        self.state.resolve_alias(alias)
    }

    /// `host:port` of the manager's REST listener.
    pub fn manager_endpoint(&self) -> Option<String> {
        self.state.services.iter().find(|s| s.kind == ServiceKind::Manager).map(|s| format!("127.0.0.1:{}", s.port))
    }

    pub fn service(&self, name: &str) -> Option<&LaunchedService> {
        self.state.services.iter().find(|s| s.name == name)
    }

    /// Keep the processes running after this handle is gone.
    pub fn detach(mut self) -> DeploymentState {
        self.torn_down = true;
        self.children.clear();
        std::mem::take(&mut self.state)
    }

    /// Stop services in reverse launch order, then remove the sandboxes. Idempotent.
    pub fn teardown(&mut self) {
        if self.torn_down {
            return;
        }
        self.torn_down = true;
        for (i, svc) in self.state.services.iter().enumerate().rev() {
            match self.children.get_mut(i).and_then(Option::take) {
                Some(mut child) => stop_child(&svc.name, &mut child),
                None => stop_pid(&svc.name, svc.pid),
            }
        }
        if let Err(e) = fs::remove_dir_all(&self.state.root) {
            if e.kind() != io::ErrorKind::NotFound {
                warn!(root = %self.state.root.display(), "cannot remove sandbox: {e}");
            }
        }
    }
}

impl Drop for HarnessDeployment {
    fn drop(&mut self) {
        self.teardown();
    }
}

impl DeploymentState {
    pub fn resolve_alias(&self, alias: &str) -> Result<&str, HarnessError> {
        self.alias_table.get(alias).map(String::as_str).ok_or_else(|| HarnessError::UnknownAlias(alias.to_owned()))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self).expect("serializable state"))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| HarnessError::Document { file: STATE_FILE.into(), message: e.to_string() })
    }

    /// Stop processes recorded in a state file and remove the sandboxes.
    pub fn teardown(&self) {
        for svc in self.services.iter().rev() {
            stop_pid(&svc.name, svc.pid);
        }
        let _ = fs::remove_dir_all(&self.root);
    }
}

fn stop_child(name: &str, child: &mut Child) {
    let pid = Pid::from_raw(child.id() as i32);
    if matches!(child.try_wait(), Ok(Some(_))) {
        return;
    }
    let _ = kill(pid, Signal::SIGTERM);
    let deadline = Instant::now() + TEARDOWN_GRACE;
    while Instant::now() < deadline {
        if matches!(child.try_wait(), Ok(Some(_))) {
            return;
        }
        thread::sleep(Duration::from_millis(20));
    }
    warn!(service = name, "still alive after SIGTERM, killing");
    let _ = child.kill();
    let _ = child.wait();
}

/// For processes this process did not spawn: poll with signal 0.
fn stop_pid(name: &str, pid: u32) {
    let pid = Pid::from_raw(pid as i32);
    if kill(pid, Signal::SIGTERM).is_err() {
        return;
    }
    let deadline = Instant::now() + TEARDOWN_GRACE;
    while Instant::now() < deadline {
        if kill(pid, None).is_err() {
            return;
        }
        thread::sleep(Duration::from_millis(20));
    }
    warn!(service = name, "still alive after SIGTERM, killing");
    let _ = kill(pid, Signal::SIGKILL);
}

/// Accept and drop TCP connections until the process is killed.
pub fn run_stub(port: u16) -> io::Result<()> {
    let listener = TcpListener::bind(("0.0.0.0", port))?;
    info!(port, "stub listening");
    for conn in listener.incoming() {
        drop(conn?);
    }
    Ok(())
}
