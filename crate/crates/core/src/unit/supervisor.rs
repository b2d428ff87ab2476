use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use nix::errno::Errno;
use nix::sys::signal::{killpg, Signal};
use nix::sys::wait::{waitpid, WaitPidFlag, WaitStatus};
use nix::unistd::Pid;
use tokio::signal::unix::{signal, SignalKind};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::{sleep_until, Instant};
use tracing::{debug, info, warn};

use super::config::{ProgramSpec, UnitConfig};
use super::process::{bad_name, faults, ProcessInfo, ProcessState, Transition};
use crate::xmlrpc::Fault;

/// Which children the supervisor collects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReapMode {
    /// Only the pids it spawned. Safe inside a process that has other children.
    TrackedOnly,
    /// Any child, including re-parented orphans. For a container's init-like process.
    AllChildren,
}

#[derive(Debug, Clone)]
pub struct SupervisorOptions {
    pub reap: ReapMode,
    /// Polling interval backing up SIGCHLD delivery.
    pub tick: Duration,
}

impl Default for SupervisorOptions {
    fn default() -> Self {
        Self { reap: ReapMode::TrackedOnly, tick: Duration::from_millis(100) }
    }
}

type Reply<T> = oneshot::Sender<Result<T, Fault>>;

enum Request {
    Start { name: String, wait: bool, reply: Reply<ProcessInfo> },
    Stop { name: String, wait: bool, reply: Reply<ProcessInfo> },
    Info { name: String, reply: Reply<ProcessInfo> },
    AllInfo { reply: oneshot::Sender<Vec<ProcessInfo>> },
    Shutdown { reply: oneshot::Sender<()> },
    Reap { reply: oneshot::Sender<usize> },
}

/// Handle to the control task. Cheap to clone; the task stops its programs
/// once the last handle is dropped.
#[derive(Clone)]
pub struct Supervisor {
    tx: mpsc::UnboundedSender<Request>,
    events: broadcast::Sender<Transition>,
    config: Arc<UnitConfig>,
}

fn gone() -> Fault {
    Fault::new(faults::SHUTDOWN_STATE, "SHUTDOWN_STATE")
}

impl Supervisor {
    /// Spawn the control task on the current tokio runtime.
    pub fn spawn(config: UnitConfig, options: SupervisorOptions) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let (events, _) = broadcast::channel(4096);
        let config = Arc::new(config);
        let task = Control::new(&config, options.reap, events.clone());
        tokio::spawn(task.run(rx, options.tick));
        Self { tx, events, config }
    }

    pub fn config(&self) -> &UnitConfig {
        &self.config
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Transition> {
        self.events.subscribe()
    }

    async fn ask<T>(&self, make: impl FnOnce(Reply<T>) -> Request) -> Result<T, Fault> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| gone())?;
        rx.await.map_err(|_| gone())?
    }

    /// Start a program. With `wait`, resolves once it leaves STARTING.
    pub async fn start(&self, name: &str, wait: bool) -> Result<ProcessInfo, Fault> {
        let name = name.to_owned();
        self.ask(|reply| Request::Start { name, wait, reply }).await
    }

    /// Stop a program. With `wait`, resolves once it is STOPPED.
    pub async fn stop(&self, name: &str, wait: bool) -> Result<ProcessInfo, Fault> {
        let name = name.to_owned();
        self.ask(|reply| Request::Stop { name, wait, reply }).await
    }

    pub async fn info(&self, name: &str) -> Result<ProcessInfo, Fault> {
        let name = name.to_owned();
        self.ask(|reply| Request::Info { name, reply }).await
    }

    pub async fn all_info(&self) -> Vec<ProcessInfo> {
        let (reply, rx) = oneshot::channel();
        if self.tx.send(Request::AllInfo { reply }).is_err() {
            return Vec::new();
        }
        rx.await.unwrap_or_default()
    }

    /// Stop everything and refuse further starts. Safe to call repeatedly.
    pub async fn shutdown(&self) {
        let (reply, rx) = oneshot::channel();
        if self.tx.send(Request::Shutdown { reply }).is_ok() {
            let _ = rx.await;
        }
    }

    /// Run one reaping pass now and return how many children it collected.
    pub async fn reap(&self) -> usize {
        let (reply, rx) = oneshot::channel();
        if self.tx.send(Request::Reap { reply }).is_err() {
            return 0;
        }
        rx.await.unwrap_or(0)
    }

    /// Read a slice of a program's stdout log. A zero `length` yields an empty string.
    pub fn read_stdout_log(&self, name: &str, offset: u64, length: u64) -> Result<String, Fault> {
        let spec = self.config.programs.get(name).ok_or_else(|| bad_name(name))?;
        read_slice(&spec.stdout_log, offset, length)
            .map_err(|e| Fault::new(faults::NOT_RUNNING, format!("cannot read log: {e}")))
    }
}

pub(crate) fn read_slice(path: &Path, offset: u64, length: u64) -> std::io::Result<String> {
    if length == 0 {
        return Ok(String::new());
    }
    let mut file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(String::new()),
        Err(e) => return Err(e),
    };
    file.seek(SeekFrom::Start(offset))?;
    let mut buf = Vec::new();
    file.take(length).read_to_end(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

fn unix_now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

struct Program {
    spec: ProgramSpec,
    state: ProcessState,
    pid: Option<i32>,
    exitstatus: Option<i32>,
    start: i64,
    stop: i64,
    description: String,
    spawnerr: String,
    /// STARTING: promotion to RUNNING. STOPPING: escalation to SIGKILL.
    deadline: Option<Instant>,
    killed: bool,
}

impl Program {
    fn info(&self) -> ProcessInfo {
        ProcessInfo {
            name: self.spec.name.clone(),
            state: self.state,
            pid: self.pid.filter(|_| self.state.has_process()).map(|p| p as u32),
            exitstatus: self.exitstatus.filter(|_| self.state == ProcessState::Exited),
            start: self.start,
            stop: self.stop,
            now: unix_now(),
            description: self.description.clone(),
            spawnerr: self.spawnerr.clone(),
            stdout_logfile: self.spec.stdout_log.display().to_string(),
            stderr_logfile: self.spec.stderr_log.display().to_string(),
        }
    }
}

struct Control {
    programs: BTreeMap<String, Program>,
    by_pid: HashMap<i32, String>,
    start_waiters: Vec<(String, Reply<ProcessInfo>)>,
    stop_waiters: Vec<(String, Reply<ProcessInfo>)>,
    shutdown_waiters: Vec<oneshot::Sender<()>>,
    shutting_down: bool,
    reap: ReapMode,
    events: broadcast::Sender<Transition>,
}

fn open_log(path: &Path) -> std::io::Result<File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    OpenOptions::new().create(true).append(true).open(path)
}

/// Exit code for `exitcodes` matching; `None` when killed by a signal.
fn decode_status(status: WaitStatus) -> Option<(Option<i32>, String)> {
    match status {
        WaitStatus::Exited(_, code) => Some((Some(code), format!("exit status {code}"))),
        WaitStatus::Signaled(_, sig, _) => Some((None, format!("terminated by {sig:?}"))),
        _ => None,
    }
}

impl Control {
    fn new(config: &UnitConfig, reap: ReapMode, events: broadcast::Sender<Transition>) -> Self {
        let programs = config
            .programs
            .values()
            .map(|spec| {
                let p = Program {
                    spec: spec.clone(),
                    state: ProcessState::Stopped,
                    pid: None,
                    exitstatus: None,
                    start: 0,
                    stop: 0,
                    description: "Not started".into(),
                    spawnerr: String::new(),
                    deadline: None,
                    killed: false,
                };
                (spec.name.clone(), p)
            })
            .collect();
        Self {
            programs,
            by_pid: HashMap::new(),
            start_waiters: Vec::new(),
            stop_waiters: Vec::new(),
            shutdown_waiters: Vec::new(),
            shutting_down: false,
            reap,
            events,
        }
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Request>, tick: Duration) {
        let mut sigchld = match signal(SignalKind::child()) {
            Ok(s) => Some(s),
            Err(e) => {
                warn!("no SIGCHLD stream, polling only: {e}");
                None
            }
        };
        let mut ticker = tokio::time::interval(tick);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);

        let autostart: Vec<String> =
            self.programs.values().filter(|p| p.spec.autostart).map(|p| p.spec.name.clone()).collect();
        for name in autostart {
            let _ = self.spawn_program(&name);
        }

        loop {
            let deadline = self.programs.values().filter_map(|p| p.deadline).min();
            tokio::select! {
                req = rx.recv() => match req {
                    Some(req) => self.handle(req),
                    None => break,
                },
                _ = async { sigchld.as_mut().unwrap().recv().await }, if sigchld.is_some() => {}
                _ = ticker.tick() => {}
                _ = sleep_until(deadline.unwrap_or_else(Instant::now)), if deadline.is_some() => {}
            }
            let _ = self.reap_children();
            self.fire_deadlines();
            self.settle_shutdown();
        }

        // Every handle is gone: nobody can observe the programs any more.
        for p in self.programs.values() {
            if let (Some(pid), true) = (p.pid, p.state.has_process()) {
                let _ = killpg(Pid::from_raw(pid), Signal::SIGKILL);
            }
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while !self.by_pid.is_empty() && Instant::now() < deadline {
            let _ = self.reap_children();
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    fn handle(&mut self, req: Request) {
        match req {
            Request::Start { name, wait, reply } => {
                if self.shutting_down {
                    let _ = reply.send(Err(gone()));
                    return;
                }
                let Some(p) = self.programs.get(&name) else {
                    let _ = reply.send(Err(bad_name(&name)));
                    return;
                };
                if !p.state.is_startable() {
                    let _ = reply.send(Err(Fault::new(faults::ALREADY_STARTED, format!("ALREADY_STARTED: {name}"))));
                    return;
                }
                if let Err(fault) = self.spawn_program(&name) {
                    let _ = reply.send(Err(fault));
                    return;
                }
                let p = &self.programs[&name];
                if wait && p.state == ProcessState::Starting {
                    self.start_waiters.push((name, reply));
                } else {
                    let _ = reply.send(Ok(p.info()));
                }
            }
            Request::Stop { name, wait, reply } => {
                let Some(p) = self.programs.get(&name) else {
                    let _ = reply.send(Err(bad_name(&name)));
                    return;
                };
                match p.state {
                    ProcessState::Starting | ProcessState::Running => {
                        self.signal_stop(&name);
                    }
                    ProcessState::Stopping => {}
                    _ => {
                        let _ = reply.send(Err(Fault::new(faults::NOT_RUNNING, format!("NOT_RUNNING: {name}"))));
                        return;
                    }
                }
                let p = &self.programs[&name];
                if wait && p.state == ProcessState::Stopping {
                    self.stop_waiters.push((name, reply));
                } else {
                    let _ = reply.send(Ok(p.info()));
                }
            }
            Request::Info { name, reply } => {
                let _ = reply.send(self.programs.get(&name).map(Program::info).ok_or_else(|| bad_name(&name)));
            }
            Request::AllInfo { reply } => {
                let _ = reply.send(self.programs.values().map(Program::info).collect());
            }
            Request::Shutdown { reply } => {
                if !self.shutting_down {
                    info!("shutting down");
                    self.shutting_down = true;
                    let live: Vec<String> = self
                        .programs
                        .values()
                        .filter(|p| matches!(p.state, ProcessState::Starting | ProcessState::Running))
                        .map(|p| p.spec.name.clone())
                        .collect();
                    for name in live {
                        self.signal_stop(&name);
                    }
                }
                self.shutdown_waiters.push(reply);
                self.settle_shutdown();
            }
            Request::Reap { reply } => {
                let _ = reply.send(self.reap_children());
            }
        }
    }

    fn transition(&mut self, name: &str, to: ProcessState) {
        let p = self.programs.get_mut(name).expect("known program");
        let from = p.state;
        debug_assert!(from.can_transition(to), "{name}: {from} -> {to}");
        p.state = to;
        debug!(program = name, %from, %to, "transition");
        let _ = self.events.send(Transition { program: name.to_owned(), from, to });

        if from == ProcessState::Starting {
            let info = p.info();
            let outcome = if to == ProcessState::Fatal {
                Err(Fault::new(faults::ABNORMAL_TERMINATION, format!("ABNORMAL_TERMINATION: {name}")))
            } else {
                Ok(info)
            };
            for (_, reply) in drain_for(&mut self.start_waiters, name) {
                let _ = reply.send(outcome.clone());
            }
        }
        if to == ProcessState::Stopped {
            let info = self.programs[name].info();
            for (_, reply) in drain_for(&mut self.stop_waiters, name) {
                let _ = reply.send(Ok(info.clone()));
            }
        }
    }

    fn spawn_program(&mut self, name: &str) -> Result<(), Fault> {
        let p = self.programs.get_mut(name).expect("known program");
        let spec = &p.spec;
        let spawned = (|| -> std::io::Result<std::process::Child> {
            let stdout = open_log(&spec.stdout_log)?;
            let stderr = open_log(&spec.stderr_log)?;
            let mut cmd = Command::new(&spec.command[0]);
            cmd.args(&spec.command[1..])
                .envs(&spec.environment)
                .stdin(Stdio::null())
                .stdout(stdout)
                .stderr(stderr)
                .process_group(0);
            if let Some(dir) = &spec.directory {
                cmd.current_dir(dir);
            }
            cmd.spawn()
        })();

        p.start = unix_now();
        p.exitstatus = None;
        p.killed = false;
        let startsecs = spec.startsecs;
        match spawned {
            Ok(child) => {
                // Dropping the handle does not reap; waitpid does.
                let pid = child.id() as i32;
                drop(child);
                p.pid = Some(pid);
                p.spawnerr.clear();
                p.description = format!("pid {pid}");
                p.deadline = (startsecs > 0.0).then(|| Instant::now() + Duration::from_secs_f64(startsecs));
                self.by_pid.insert(pid, name.to_owned());
                info!(program = name, pid, "spawned");
                self.transition(name, ProcessState::Starting);
                if startsecs <= 0.0 {
                    self.transition(name, ProcessState::Running);
                }
                Ok(())
            }
            Err(e) => {
                warn!(program = name, "spawn failed: {e}");
                p.pid = None;
                p.spawnerr = e.to_string();
                p.description = format!("spawn error: {e}");
                p.stop = unix_now();
                self.transition(name, ProcessState::Starting);
                self.transition(name, ProcessState::Fatal);
                Err(Fault::new(faults::SPAWN_ERROR, format!("SPAWN_ERROR: {name}: {e}")))
            }
        }
    }

    fn signal_stop(&mut self, name: &str) {
        let p = self.programs.get_mut(name).expect("known program");
        let Some(pid) = p.pid else { return };
        match killpg(Pid::from_raw(pid), Signal::SIGTERM) {
            Ok(()) | Err(Errno::ESRCH) => {}
            Err(e) => warn!(program = name, pid, "SIGTERM failed: {e}"),
        }
        p.deadline = Some(Instant::now() + Duration::from_secs_f64(p.spec.stopwaitsecs.max(0.0)));
        self.transition(name, ProcessState::Stopping);
    }

    fn fire_deadlines(&mut self) {
        let now = Instant::now();
        let due: Vec<String> = self
            .programs
            .values()
            .filter(|p| p.deadline.is_some_and(|d| d <= now))
            .map(|p| p.spec.name.clone())
            .collect();
        for name in due {
            let p = self.programs.get_mut(&name).expect("known program");
            p.deadline = None;
            match p.state {
                ProcessState::Starting => self.transition(&name, ProcessState::Running),
                ProcessState::Stopping => {
                    if let Some(pid) = p.pid {
                        warn!(program = %name, pid, "grace period over, killing");
                        p.killed = true;
                        let _ = killpg(Pid::from_raw(pid), Signal::SIGKILL);
                    }
                }
                _ => {}
            }
        }
    }

    fn reap_children(&mut self) -> usize {
        let mut reaped = 0;
        match self.reap {
            ReapMode::TrackedOnly => {
                let pids: Vec<i32> = self.by_pid.keys().copied().collect();
                for pid in pids {
                    match waitpid(Pid::from_raw(pid), Some(WaitPidFlag::WNOHANG)) {
                        Ok(WaitStatus::StillAlive) => {}
                        Ok(status) => {
                            if let Some(decoded) = decode_status(status) {
                                reaped += 1;
                                self.on_exit(pid, decoded);
                            }
                        }
                        Err(Errno::ECHILD) => self.on_exit(pid, (None, "lost".into())),
                        Err(e) => warn!(pid, "waitpid: {e}"),
                    }
                }
            }
            ReapMode::AllChildren => loop {
                match waitpid(Pid::from_raw(-1), Some(WaitPidFlag::WNOHANG)) {
                    Ok(WaitStatus::StillAlive) | Err(Errno::ECHILD) => break,
                    Ok(status) => {
                        let Some(pid) = status.pid() else { continue };
                        let Some(decoded) = decode_status(status) else { continue };
                        reaped += 1;
                        if self.by_pid.contains_key(&pid.as_raw()) {
                            self.on_exit(pid.as_raw(), decoded);
                        } else {
                            debug!(pid = pid.as_raw(), "reaped orphan: {}", decoded.1);
                        }
                    }
                    Err(Errno::EINTR) => continue,
                    Err(e) => {
                        warn!("waitpid: {e}");
                        break;
                    }
                }
            },
        }
        reaped
    }

    fn on_exit(&mut self, pid: i32, (code, description): (Option<i32>, String)) {
        let Some(name) = self.by_pid.remove(&pid) else { return };
        let p = self.programs.get_mut(&name).expect("known program");
        if p.pid != Some(pid) {
            return;
        }
        info!(program = %name, pid, "{description}");
        p.pid = None;
        p.deadline = None;
        p.stop = unix_now();
        p.description = description;
        match p.state {
            ProcessState::Starting => match code.filter(|c| p.spec.exitcodes.contains(c)) {
                Some(c) => {
                    p.exitstatus = Some(c);
                    self.transition(&name, ProcessState::Exited);
                }
                None => {
                    p.description = format!("exited too quickly ({})", p.description);
                    self.transition(&name, ProcessState::Fatal);
                }
            },
            ProcessState::Running => {
                p.exitstatus = Some(code.unwrap_or(-1));
                let restart = p.spec.autorestart && !self.shutting_down;
                self.transition(&name, ProcessState::Exited);
                if restart {
                    let _ = self.spawn_program(&name);
                }
            }
            ProcessState::Stopping => {
                if p.killed {
                    p.description = format!("killed after grace period ({})", p.description);
                }
                self.transition(&name, ProcessState::Stopped);
            }
            _ => {}
        }
    }

    fn settle_shutdown(&mut self) {
        if self.shutting_down && self.programs.values().all(|p| !p.state.has_process()) {
            for w in self.shutdown_waiters.drain(..) {
                let _ = w.send(());
            }
        }
    }
}

fn drain_for<T>(waiters: &mut Vec<(String, T)>, name: &str) -> Vec<(String, T)> {
    let (hit, keep): (Vec<_>, Vec<_>) = std::mem::take(waiters).into_iter().partition(|(n, _)| n == name);
    *waiters = keep;
    hit
}
