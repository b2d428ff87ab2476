use std::collections::BTreeMap;
use std::path::PathBuf;

use indexmap::IndexMap;
use ini::{Ini, ParseOption};
use thiserror::Error;

pub const DEFAULT_STARTSECS: f64 = 1.0;
pub const DEFAULT_STOPWAITSECS: f64 = 10.0;
pub const DEFAULT_LOG_DIR: &str = "/toskose/logs";

#[derive(Debug, Error, PartialEq)]
pub enum UnitConfigError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("environment variable `{name}` is not set (in [{section}] {key})")]
    UnresolvedEnvVar { name: String, section: String, key: String },
    #[error("program `{0}` is defined more than once")]
    DuplicateProgram(String),
    #[error("[{section}] {key}: {message}")]
    Invalid { section: String, key: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    /// Empty means every interface.
    pub host: String,
    pub port: u16,
    pub user: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorSettings {
    pub log_level: String,
    pub log_file: Option<PathBuf>,
    pub child_log_dir: PathBuf,
    /// Default grace period for programs that do not set their own.
    pub stopwaitsecs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSpec {
    pub name: String,
    pub command: Vec<String>,
    pub directory: Option<PathBuf>,
    pub environment: IndexMap<String, String>,
    pub autostart: bool,
    pub autorestart: bool,
    pub startsecs: f64,
    pub exitcodes: Vec<i32>,
    pub stopwaitsecs: f64,
    pub stdout_log: PathBuf,
    pub stderr_log: PathBuf,
}

impl ProgramSpec {
    /// A program with default settings and logs under `log_dir/<name>/`.
    pub fn new(name: &str, command: &[&str], log_dir: &std::path::Path) -> Self {
        Self {
            name: name.to_owned(),
            command: command.iter().map(|s| s.to_string()).collect(),
            directory: None,
            environment: IndexMap::new(),
            autostart: false,
            autorestart: false,
            startsecs: DEFAULT_STARTSECS,
            exitcodes: vec![0],
            stopwaitsecs: DEFAULT_STOPWAITSECS,
            stdout_log: log_dir.join(name).join("stdout.log"),
            stderr_log: log_dir.join(name).join("stderr.log"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitConfig {
    pub http: HttpSettings,
    pub supervisor: SupervisorSettings,
    pub programs: BTreeMap<String, ProgramSpec>,
}

/// Parse an INI unit configuration, expanding `${NAME}` from the process environment.
pub fn load_unit_config(document: &str) -> Result<UnitConfig, UnitConfigError> {
    load_unit_config_with(document, |name| std::env::var(name).ok())
}

/// Same as [`load_unit_config`] with an explicit variable lookup.
pub fn load_unit_config_with(
    document: &str,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<UnitConfig, UnitConfigError> {
    let ini = Ini::load_from_str_opt(
        document,
        ParseOption { enabled_quote: false, enabled_escape: false, ..ParseOption::default() },
    )
    .map_err(|e| UnitConfigError::Syntax { line: e.line + 1, message: e.msg.to_string() })?;

    let field = |section: &str, key: &str, raw: &str| -> Result<String, UnitConfigError> {
        expand(raw, &lookup).map_err(|e| match e {
            Expand::Unset(name) => {
                UnitConfigError::UnresolvedEnvVar { name, section: section.to_owned(), key: key.to_owned() }
            }
            Expand::Unclosed => invalid(section, key, "unterminated `${`"),
        })
    };
    let get = |section: &str, key: &str| -> Result<Option<String>, UnitConfigError> {
        ini.section(Some(section)).and_then(|p| p.get(key)).map(|raw| field(section, key, raw)).transpose()
    };

    const HTTP: &str = "inet_http_server";
    if ini.section(Some(HTTP)).is_none() {
        return Err(invalid(HTTP, "", "section is required"));
    }
    let (host, port) = parse_listen(&get(HTTP, "port")?.unwrap_or_default())
        .ok_or_else(|| invalid(HTTP, "port", "expected [host]:port"))?;
    let user = get(HTTP, "username")?.unwrap_or_default();
    let password = get(HTTP, "password")?.unwrap_or_default();
    if user.is_empty() || password.is_empty() {
        return Err(invalid(HTTP, "username", "credentials must not be empty"));
    }

    const SUP: &str = "supervisord";
    let child_log_dir = PathBuf::from(get(SUP, "childlogdir")?.unwrap_or_else(|| DEFAULT_LOG_DIR.into()));
    let default_stopwait = match get(SUP, "stopwaitsecs")? {
        Some(v) => seconds(SUP, "stopwaitsecs", &v)?,
        None => DEFAULT_STOPWAITSECS,
    };
    let supervisor = SupervisorSettings {
        log_level: get(SUP, "loglevel")?.unwrap_or_else(|| "INFO".into()),
        log_file: get(SUP, "logfile")?.map(PathBuf::from),
        child_log_dir: child_log_dir.clone(),
        stopwaitsecs: default_stopwait,
    };

    let mut programs = BTreeMap::new();
    for (section, props) in ini.iter() {
        let Some(name) = section.and_then(|s| s.strip_prefix("program:")) else {
            continue;
        };
        let section = format!("program:{name}");
        let sec = section.as_str();
        let get = |key: &str| props.get(key).map(|raw| field(sec, key, raw)).transpose();

        let raw_command = props.get("command").ok_or_else(|| invalid(sec, "command", "missing"))?;
        let command = shlex::split(raw_command)
            .ok_or_else(|| invalid(sec, "command", "unbalanced quotes"))?
            .iter()
            .map(|tok| field(sec, "command", tok))
            .collect::<Result<Vec<_>, _>>()?;
        if command.is_empty() {
            return Err(invalid(sec, "command", "must not be empty"));
        }

        let mut spec = ProgramSpec::new(name, &[], &child_log_dir);
        spec.command = command;
        spec.directory = get("directory")?.map(PathBuf::from);
        if let Some(raw) = props.get("environment") {
            for (k, v) in split_environment(raw).map_err(|m| invalid(sec, "environment", m))? {
                spec.environment.insert(k, field(sec, "environment", &v)?);
            }
        }
        if let Some(v) = get("autostart")? {
            spec.autostart = boolean(sec, "autostart", &v)?;
        }
        if let Some(v) = get("autorestart")? {
            spec.autorestart = boolean(sec, "autorestart", &v)?;
        }
        if let Some(v) = get("startsecs")? {
            spec.startsecs = seconds(sec, "startsecs", &v)?;
        }
        spec.stopwaitsecs = match get("stopwaitsecs")? {
            Some(v) => seconds(sec, "stopwaitsecs", &v)?,
            None => default_stopwait,
        };
        if let Some(v) = get("exitcodes")? {
            spec.exitcodes = v
                .split(',')
                .map(|c| c.trim().parse::<i32>())
                .collect::<Result<_, _>>()
                .map_err(|_| invalid(sec, "exitcodes", "expected comma-separated integers"))?;
        }
        if let Some(v) = get("stdout_logfile")? {
            spec.stdout_log = PathBuf::from(v);
        }
        if let Some(v) = get("stderr_logfile")? {
            spec.stderr_log = PathBuf::from(v);
        }
        if programs.insert(name.to_owned(), spec).is_some() {
            return Err(UnitConfigError::DuplicateProgram(name.to_owned()));
        }
    }

    Ok(UnitConfig { http: HttpSettings { host, port, user, password }, supervisor, programs })
}

fn invalid(section: &str, key: &str, message: &str) -> UnitConfigError {
    UnitConfigError::Invalid { section: section.to_owned(), key: key.to_owned(), message: message.to_owned() }
}

enum Expand {
    Unset(String),
    Unclosed,
}

fn expand(raw: &str, lookup: &impl Fn(&str) -> Option<String>) -> Result<String, Expand> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find('}').ok_or(Expand::Unclosed)?;
        let name = &after[..end];
        out.push_str(&lookup(name).ok_or_else(|| Expand::Unset(name.to_owned()))?);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// `:9001`, `9001` or `host:9001`.
fn parse_listen(value: &str) -> Option<(String, u16)> {
    let (host, port) = value.rsplit_once(':').unwrap_or(("", value));
    let port = port.trim().parse().ok()?;
    let host = if host == "*" { "" } else { host };
    Some((host.to_owned(), port))
}

fn boolean(section: &str, key: &str, v: &str) -> Result<bool, UnitConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(section, key, "expected a boolean")),
    }
}

fn seconds(section: &str, key: &str, v: &str) -> Result<f64, UnitConfigError> {
    match v.trim().parse::<f64>() {
        Ok(s) if s >= 0.0 && s.is_finite() => Ok(s),
        _ => Err(invalid(section, key, "expected a non-negative number of seconds")),
    }
}

/// `A="x, y",B=z` → [(A, "x, y"), (B, "z")]; placeholders are left for later expansion.
fn split_environment(raw: &str) -> Result<Vec<(String, String)>, &'static str> {
    let mut pairs = Vec::new();
    let mut chars = raw.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace() || *c == ',') {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(pairs);
        }
        let mut key = String::new();
        for c in chars.by_ref() {
            if c == '=' {
                break;
            }
            key.push(c);
        }
        let key = key.trim().to_owned();
        if key.is_empty() {
            return Err("expected KEY=value pairs");
        }
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            let mut closed = false;
            while let Some(c) = chars.next() {
                match c {
                    '"' => {
                        closed = true;
                        break;
                    }
                    '\\' => value.extend(chars.next()),
                    c => value.push(c),
                }
            }
            if !closed {
                return Err("unterminated quote");
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c == ',' {
                    break;
                }
                value.push(c);
                chars.next();
            }
            value = value.trim().to_owned();
        }
        pairs.push((key, value));
    }
}
