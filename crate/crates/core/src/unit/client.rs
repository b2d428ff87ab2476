use std::time::Duration;

use thiserror::Error;

use super::process::ProcessInfo;
use super::rpc::{basic_auth, RPC_PATH};
use crate::xmlrpc::{decode_response, encode_call, Fault, Value};

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("fault {}: {}", .0.code, .0.message)]
    Fault(Fault),
    #[error("unit unreachable: {0}")]
    Unreachable(String),
    #[error("unit rejected the credentials")]
    Unauthorized,
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn fault_code(&self) -> Option<i32> {
        match self {
            ClientError::Fault(f) => Some(f.code),
            _ => None,
        }
    }
}

/// Async XML-RPC client for one unit.
#[derive(Debug, Clone)]
pub struct UnitClient {
    endpoint: String,
    url: String,
    auth: Option<String>,
    http: reqwest::Client,
}

impl UnitClient {
    /// `endpoint` is `host:port`.
    pub fn new(endpoint: &str, user: &str, password: &str) -> Self {
        let http =
            reqwest::Client::builder().connect_timeout(CONNECT_TIMEOUT).build().expect("static client configuration");
        Self {
            endpoint: endpoint.to_owned(),
            url: format!("http://{endpoint}{RPC_PATH}"),
            auth: (!user.is_empty()).then(|| basic_auth(user, password)),
            http,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub async fn call(&self, method: &str, params: &[Value]) -> Result<Value, ClientError> {
        let mut req = self
            .http
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "text/xml")
            .body(encode_call(method, params));
        if let Some(auth) = &self.auth {
            req = req.header(reqwest::header::AUTHORIZATION, auth);
        }
        let resp = req.send().await.map_err(|e| ClientError::Unreachable(e.to_string()))?;
        match resp.status() {
            s if s == reqwest::StatusCode::UNAUTHORIZED => return Err(ClientError::Unauthorized),
            s if !s.is_success() => return Err(ClientError::Protocol(format!("HTTP {s}"))),
            _ => {}
        }
        let text = resp.text().await.map_err(|e| ClientError::Unreachable(e.to_string()))?;
        decode_response(&text).map_err(|e| ClientError::Protocol(e.to_string()))?.map_err(ClientError::Fault)
    }

    pub async fn get_state(&self) -> Result<String, ClientError> {
        let v = self.call("supervisor.getState", &[]).await?;
        v.get("statename")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ClientError::Protocol("statename missing".into()))
    }

    pub async fn start_process(&self, name: &str, wait: bool) -> Result<bool, ClientError> {
        let v = self.call("supervisor.startProcess", &[name.into(), wait.into()]).await?;
        Ok(v.as_bool().unwrap_or(false))
    }

    pub async fn stop_process(&self, name: &str, wait: bool) -> Result<bool, ClientError> {
        let v = self.call("supervisor.stopProcess", &[name.into(), wait.into()]).await?;
        Ok(v.as_bool().unwrap_or(false))
    }

    pub async fn get_process_info(&self, name: &str) -> Result<ProcessInfo, ClientError> {
        let v = self.call("supervisor.getProcessInfo", &[name.into()]).await?;
        ProcessInfo::from_value(&v).ok_or_else(|| ClientError::Protocol("bad process info".into()))
    }

    pub async fn get_all_process_info(&self) -> Result<Vec<ProcessInfo>, ClientError> {
        let v = self.call("supervisor.getAllProcessInfo", &[]).await?;
        v.as_array()
            .ok_or_else(|| ClientError::Protocol("expected an array".into()))?
            .iter()
            .map(|i| ProcessInfo::from_value(i).ok_or_else(|| ClientError::Protocol("bad process info".into())))
            .collect()
    }

    pub async fn read_stdout_log(&self, name: &str, offset: u64, length: u64) -> Result<String, ClientError> {
        let v = self
            .call(
                "supervisor.readProcessStdoutLog",
                &[name.into(), Value::Int(offset as i64), Value::Int(length as i64)],
            )
            .await?;
        Ok(v.as_str().unwrap_or_default().to_owned())
    }

    pub async fn shutdown(&self) -> Result<(), ClientError> {
        self.call("supervisor.shutdown", &[]).await.map(|_| ())
    }

    pub async fn list_methods(&self) -> Result<Vec<String>, ClientError> {
        let v = self.call("system.listMethods", &[]).await?;
        Ok(v.as_array().unwrap_or_default().iter().filter_map(|m| m.as_str().map(str::to_owned)).collect())
    }
}
