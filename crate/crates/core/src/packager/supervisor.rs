use std::fmt::Write;

use super::enrich::EnrichedModel;
use super::{layout, PackagerError};

/// Seconds a program must stay up to count as started.
pub const STARTSECS: u32 = 1;
/// Grace period between the termination and the kill signal.
pub const STOPWAITSECS: u32 = 10;

/// Render the unit configuration of a hosting container: HTTP settings,
/// supervisord settings, RPC interface settings, then one program section
/// per hosted component operation. Values come from the container
/// environment through `${NAME}` placeholders.
pub fn generate_supervisor_config(m: &EnrichedModel, container: &str) -> Result<String, PackagerError> {
    let programs =
        m.programs.get(container).ok_or_else(|| PackagerError::NotAHostingContainer(container.to_owned()))?;

    let mut out = String::new();
    out.push_str("[inet_http_server]\n");
    out.push_str("port=:${SUPERVISORD_PORT}\n");
    out.push_str("username=${SUPERVISORD_USER}\n");
    out.push_str("password=${SUPERVISORD_PASSWORD}\n\n");

    out.push_str("[supervisord]\n");
    out.push_str("nodaemon=true\n");
    out.push_str("loglevel=${SUPERVISORD_LOG_LEVEL}\n");
    let _ = writeln!(out, "logfile={}/supervisord.log", layout::LOG_ROOT);
    let _ = writeln!(out, "childlogdir={}", layout::LOG_ROOT);
    let _ = writeln!(out, "stopwaitsecs={STOPWAITSECS}\n");

    out.push_str("[rpcinterface:supervisor]\n");
    out.push_str("supervisor.rpcinterface_factory=supervisor.rpcinterface:make_main_rpcinterface\n");

    for p in programs {
        let _ = writeln!(out, "\n[program:{}]", p.name);
        let _ = writeln!(out, "command=/bin/sh {}", p.script);
        let _ = writeln!(out, "directory={}", p.directory);
        if !p.inputs.is_empty() {
            let env: Vec<String> = p.inputs.iter().map(|v| format!("{v}=\"${{{v}}}\"")).collect();
            let _ = writeln!(out, "environment={}", env.join(","));
        }
        out.push_str("autostart=false\n");
        out.push_str("autorestart=false\n");
        let _ = writeln!(out, "startsecs={STARTSECS}");
        let _ = writeln!(out, "stopwaitsecs={STOPWAITSECS}");
        out.push_str("exitcodes=0\n");
        let _ = writeln!(out, "stdout_logfile={}", layout::program_log(&p.name, "stdout"));
        let _ = writeln!(out, "stderr_logfile={}", layout::program_log(&p.name, "stderr"));
    }
    Ok(out)
}
