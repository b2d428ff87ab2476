//! The orchestration service: loads the application model and forwards
//! component lifecycle requests to the units over XML-RPC.

mod api;
mod model;
mod service;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;
use tracing::info;

pub use api::{api_router, API_PREFIX, DEFAULT_LOG_LENGTH};
pub use model::{load_app_model, AppModel, ComponentModel, ContainerModel, Endpoint, ModelError};
pub use service::{
    client_for, AliasTable, ComponentDetail, ComponentState, ComponentSummary, ContainerSummary, ManagerService,
    OperationResult, Outcome, ServiceError, UnknownProtocol, DEFAULT_OPERATION_TIMEOUT, LIVENESS_TTL, PROTOCOL_XMLRPC,
    SUCCESS_EXIT_CODES,
};

pub const ENV_PORT: &str = "TOSKOSE_MANAGER_PORT";
pub const ENV_MODE: &str = "TOSKOSE_APP_MODE";
pub const ENV_SECRET_KEY: &str = "SECRET_KEY";
/// JSON object mapping unit aliases to `host:port`; for runs without overlay DNS.
pub const ENV_ALIAS_TABLE: &str = "TOSKOSE_ALIAS_TABLE";

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("bad {name}: {message}")]
    Env { name: &'static str, message: String },
    #[error("cannot listen: {0}")]
    Listen(std::io::Error),
}

fn read(path: &Path) -> Result<String, ManagerError> {
    std::fs::read_to_string(path).map_err(|source| ManagerError::Read { path: path.display().to_string(), source })
}

/// Settings resolved from the model and the environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManagerRuntime {
    pub port: u16,
    pub development: bool,
    pub aliases: HashMap<String, String>,
}

pub fn runtime_settings(
    model: &AppModel,
    env: impl Fn(&str) -> Option<String>,
) -> Result<ManagerRuntime, ManagerError> {
    let port = match env(ENV_PORT) {
        Some(p) => p.parse().map_err(|_| ManagerError::Env { name: ENV_PORT, message: p })?,
        None => model.config.manager.port,
    };
    let mode = env(ENV_MODE).unwrap_or_else(|| model.config.manager.mode.clone());
    let aliases = match env(ENV_ALIAS_TABLE) {
        Some(path) => {
            let text = read(Path::new(&path))?;
            serde_json::from_str(&text)
                .map_err(|e| ManagerError::Env { name: ENV_ALIAS_TABLE, message: e.to_string() })?
        }
        None => HashMap::new(),
    };
    Ok(ManagerRuntime { port, development: mode == "development", aliases })
}

/// Serve the REST API until SIGTERM or SIGINT.
pub async fn run_manager(template_path: &Path, config_path: &Path) -> Result<(), ManagerError> {
    let model = load_app_model(&read(template_path)?, &read(config_path)?)?;
    let rt = runtime_settings(&model, |k| std::env::var(k).ok())?;
    let manager = model.config.manager.clone();
    let credentials = (!rt.development).then_some((manager.user.as_str(), manager.password.as_str()));
    let service = Arc::new(ManagerService::new(model.clone(), AliasTable(rt.aliases.clone())));
    let app = api_router(service, credentials);

    let listener = tokio::net::TcpListener::bind(("0.0.0.0", rt.port)).await.map_err(ManagerError::Listen)?;
    info!(port = rt.port, development = rt.development, "manager listening");
    axum::serve(listener, app).with_graceful_shutdown(crate::unit::termination()).await.map_err(ManagerError::Listen)
}
