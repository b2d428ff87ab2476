use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use base64::Engine;
use tokio::net::TcpListener;
use tokio::sync::Notify;
use tracing::debug;

use super::process::faults;
use super::supervisor::Supervisor;
use crate::xmlrpc::{decode_call, encode_response, Fault, MethodCall, Value};

pub const RPC_PATH: &str = "/RPC2";

pub const METHODS: &[&str] = &[
    "supervisor.getState",
    "supervisor.getProcessInfo",
    "supervisor.getAllProcessInfo",
    "supervisor.startProcess",
    "supervisor.stopProcess",
    "supervisor.readProcessStdoutLog",
    "supervisor.shutdown",
    "system.listMethods",
];

#[derive(Clone)]
struct RpcState {
    supervisor: Supervisor,
    /// Expected `Authorization` header; `None` disables authentication.
    credentials: Option<String>,
    shutdown: Arc<Notify>,
}

/// `Basic` credential header value for a user and password.
pub fn basic_auth(user: &str, password: &str) -> String {
    let token = base64::engine::general_purpose::STANDARD.encode(format!("{user}:{password}"));
    format!("Basic {token}")
}

/// The XML-RPC router. `shutdown` is notified when a client calls `supervisor.shutdown`.
pub fn rpc_router(supervisor: Supervisor, shutdown: Arc<Notify>) -> Router {
    let http = &supervisor.config().http;
    let credentials = (!http.user.is_empty()).then(|| basic_auth(&http.user, &http.password));
    Router::new().route(RPC_PATH, post(handle_rpc)).with_state(RpcState { supervisor, credentials, shutdown })
}

/// Serve until `stop` resolves or a client requests shutdown.
pub async fn serve_rpc(
    listener: TcpListener,
    supervisor: Supervisor,
    stop: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let notify = Arc::new(Notify::new());
    let app = rpc_router(supervisor, notify.clone());
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = stop => {}
                _ = notify.notified() => {}
            }
        })
        .await
}

/// Bind the configured listen address.
pub async fn bind_rpc(supervisor: &Supervisor) -> std::io::Result<TcpListener> {
    let http = &supervisor.config().http;
    let host = if http.host.is_empty() { "0.0.0.0" } else { http.host.as_str() };
    let addr: SocketAddr = format!("{host}:{}", http.port)
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{e}")))?;
    TcpListener::bind(addr).await
}

async fn handle_rpc(State(state): State<RpcState>, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(expected) = &state.credentials {
        let given = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return (StatusCode::UNAUTHORIZED, [(header::WWW_AUTHENTICATE, "Basic realm=\"unit\"")], "Unauthorized")
                .into_response();
        }
    }
    let text = String::from_utf8_lossy(&body);
    let call = match decode_call(&text) {
        Ok(call) => call,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    debug!(method = %call.method, "rpc");
    let result = dispatch(&state, call).await;
    ([(header::CONTENT_TYPE, "text/xml")], encode_response(&result)).into_response()
}

fn incorrect() -> Fault {
    Fault::new(faults::INCORRECT_PARAMETERS, "INCORRECT_PARAMETERS")
}

/// Program names may come as `group:name`; groups are single programs here.
fn program_arg(params: &[Value], i: usize) -> Result<&str, Fault> {
    let raw = params.get(i).and_then(Value::as_str).ok_or_else(incorrect)?;
    Ok(raw.rsplit(':').next().unwrap_or(raw))
}

fn wait_arg(params: &[Value], i: usize) -> Result<bool, Fault> {
    match params.get(i) {
        None => Ok(true),
        Some(v) => v.as_bool().ok_or_else(incorrect),
    }
}

fn offset_arg(params: &[Value], i: usize) -> Result<u64, Fault> {
    let n = params.get(i).and_then(Value::as_int).ok_or_else(incorrect)?;
    u64::try_from(n).map_err(|_| incorrect())
}

async fn dispatch(state: &RpcState, call: MethodCall) -> Result<Value, Fault> {
    let sup = &state.supervisor;
    let p = &call.params;
    match call.method.as_str() {
        "supervisor.getState" => {
            let mut m = std::collections::BTreeMap::new();
            m.insert("statecode".into(), Value::Int(1));
            m.insert("statename".into(), Value::from("RUNNING"));
            Ok(Value::Struct(m))
        }
        "supervisor.getProcessInfo" => Ok(sup.info(program_arg(p, 0)?).await?.to_value()),
        "supervisor.getAllProcessInfo" => Ok(Value::Array(sup.all_info().await.iter().map(|i| i.to_value()).collect())),
        "supervisor.startProcess" => {
            sup.start(program_arg(p, 0)?, wait_arg(p, 1)?).await?;
            Ok(Value::Bool(true))
        }
        "supervisor.stopProcess" => {
            sup.stop(program_arg(p, 0)?, wait_arg(p, 1)?).await?;
            Ok(Value::Bool(true))
        }
        "supervisor.readProcessStdoutLog" => {
            let name = program_arg(p, 0)?;
            let text = sup.read_stdout_log(name, offset_arg(p, 1)?, offset_arg(p, 2)?)?;
            Ok(Value::String(text))
        }
        "supervisor.shutdown" => {
            sup.shutdown().await;
            state.shutdown.notify_one();
            Ok(Value::Bool(true))
        }
        "system.listMethods" => Ok(Value::Array(METHODS.iter().map(|m| Value::from(*m)).collect())),
        other => Err(Fault::new(faults::UNKNOWN_METHOD, format!("UNKNOWN_METHOD: {other}"))),
    }
}
