//! A small process supervisor driven over XML-RPC.

mod client;
mod config;
mod process;
mod rpc;
mod supervisor;

use std::path::Path;

use thiserror::Error;
use tracing::info;

pub use client::{ClientError, UnitClient, CONNECT_TIMEOUT};
pub use config::*;
pub use process::{faults, ProcessInfo, ProcessState, Transition};
pub use rpc::{basic_auth, bind_rpc, rpc_router, serve_rpc, METHODS, RPC_PATH};
pub use supervisor::{ReapMode, Supervisor, SupervisorOptions};

#[derive(Debug, Error)]
pub enum UnitError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] UnitConfigError),
    #[error("cannot listen: {0}")]
    Listen(std::io::Error),
}

/// Run the unit daemon until SIGTERM, SIGINT or a `supervisor.shutdown` call,
/// then stop every program and return.
pub async fn run_unit(config_path: &Path, reap: ReapMode) -> Result<(), UnitError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|source| UnitError::Read { path: config_path.display().to_string(), source })?;
    let config = load_unit_config(&text)?;
    if reap == ReapMode::AllChildren {
        if let Err(e) = nix::sys::prctl::set_child_subreaper(true) {
            tracing::warn!("cannot become a subreaper: {e}");
        }
    }
    let supervisor = Supervisor::spawn(config, SupervisorOptions { reap, ..Default::default() });
    let listener = bind_rpc(&supervisor).await.map_err(UnitError::Listen)?;
    info!(addr = %listener.local_addr().map_err(UnitError::Listen)?, "unit listening");

    serve_rpc(listener, supervisor.clone(), termination()).await.map_err(UnitError::Listen)?;
    supervisor.shutdown().await;
    info!("unit stopped");
    Ok(())
}

/// Resolves on SIGTERM or SIGINT.
pub async fn termination() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).expect("signal handler");
    let mut int = signal(SignalKind::interrupt()).expect("signal handler");
    tokio::select! {
        _ = term.recv() => {}
        _ = int.recv() => {}
    }
}
