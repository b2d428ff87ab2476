use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::xmlrpc::{Fault, Value};

/// Fault codes, numbered as Supervisor numbers them.
pub mod faults {
    pub const UNKNOWN_METHOD: i32 = 1;
    pub const INCORRECT_PARAMETERS: i32 = 2;
    pub const SHUTDOWN_STATE: i32 = 6;
    pub const BAD_NAME: i32 = 10;
    pub const ABNORMAL_TERMINATION: i32 = 40;
    pub const SPAWN_ERROR: i32 = 50;
    pub const ALREADY_STARTED: i32 = 60;
    pub const NOT_RUNNING: i32 = 70;
}

pub(crate) fn bad_name(name: &str) -> Fault {
    Fault::new(faults::BAD_NAME, format!("BAD_NAME: {name}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProcessState {
    Stopped,
    Starting,
    Running,
    Stopping,
    Exited,
    Fatal,
}

impl ProcessState {
    pub fn code(self) -> i64 {
        match self {
            ProcessState::Stopped => 0,
            ProcessState::Starting => 10,
            ProcessState::Running => 20,
            ProcessState::Stopping => 40,
            ProcessState::Exited => 100,
            ProcessState::Fatal => 200,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        Some(match code {
            0 => ProcessState::Stopped,
            10 => ProcessState::Starting,
            20 => ProcessState::Running,
            40 => ProcessState::Stopping,
            100 => ProcessState::Exited,
            200 => ProcessState::Fatal,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ProcessState::Stopped => "STOPPED",
            ProcessState::Starting => "STARTING",
            ProcessState::Running => "RUNNING",
            ProcessState::Stopping => "STOPPING",
            ProcessState::Exited => "EXITED",
            ProcessState::Fatal => "FATAL",
        }
    }

    /// States with a live process.
    pub fn has_process(self) -> bool {
        matches!(self, ProcessState::Starting | ProcessState::Running | ProcessState::Stopping)
    }

    /// States from which a program may be started.
    pub fn is_startable(self) -> bool {
        matches!(self, ProcessState::Stopped | ProcessState::Exited | ProcessState::Fatal)
    }

    /// The transition relation the supervisor is allowed to follow.
    pub fn can_transition(self, to: ProcessState) -> bool {
        use ProcessState::*;
        matches!(
            (self, to),
            (Stopped | Exited | Fatal, Starting)
                | (Starting, Running | Exited | Fatal | Stopping)
                | (Running, Stopping | Exited)
                | (Stopping, Stopped)
        )
    }
}

impl fmt::Display for ProcessState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A state change, as broadcast by the supervisor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub program: String,
    pub from: ProcessState,
    pub to: ProcessState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessInfo {
    pub name: String,
    pub state: ProcessState,
    pub pid: Option<u32>,
    pub exitstatus: Option<i32>,
    /// Unix seconds; 0 when never started.
    pub start: i64,
    pub stop: i64,
    pub now: i64,
    pub description: String,
    pub spawnerr: String,
    pub stdout_logfile: String,
    pub stderr_logfile: String,
}

impl ProcessInfo {
    pub fn to_value(&self) -> Value {
        let mut m = BTreeMap::new();
        let s = |v: &str| Value::String(v.to_owned());
        m.insert("name".into(), s(&self.name));
        m.insert("group".into(), s(&self.name));
        m.insert("state".into(), Value::Int(self.state.code()));
        m.insert("statename".into(), s(self.state.name()));
        m.insert("pid".into(), Value::Int(self.pid.map_or(0, i64::from)));
        if let Some(code) = self.exitstatus {
            m.insert("exitstatus".into(), Value::Int(code.into()));
        }
        m.insert("start".into(), Value::Int(self.start));
        m.insert("stop".into(), Value::Int(self.stop));
        m.insert("now".into(), Value::Int(self.now));
        m.insert("description".into(), s(&self.description));
        m.insert("spawnerr".into(), s(&self.spawnerr));
        m.insert("logfile".into(), s(&self.stdout_logfile));
        m.insert("stdout_logfile".into(), s(&self.stdout_logfile));
        m.insert("stderr_logfile".into(), s(&self.stderr_logfile));
        Value::Struct(m)
    }

    pub fn from_value(v: &Value) -> Option<Self> {
        let text = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or_default().to_owned();
        let int = |k: &str| v.get(k).and_then(Value::as_int);
        let state = ProcessState::from_code(int("state")?)?;
        Some(Self {
            name: v.get("name")?.as_str()?.to_owned(),
            state,
            pid: int("pid").filter(|p| *p > 0).map(|p| p as u32),
            exitstatus: int("exitstatus").filter(|_| state == ProcessState::Exited).map(|c| c as i32),
            start: int("start").unwrap_or(0),
            stop: int("stop").unwrap_or(0),
            now: int("now").unwrap_or(0),
            description: text("description"),
            spawnerr: text("spawnerr"),
            stdout_logfile: text("stdout_logfile"),
            stderr_logfile: text("stderr_logfile"),
        })
    }
}
