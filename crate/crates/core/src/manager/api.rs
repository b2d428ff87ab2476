use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::service::{ManagerService, OperationResult, Outcome, ServiceError};
use crate::unit::basic_auth;

pub const API_PREFIX: &str = "/api/v1";
pub const DEFAULT_LOG_LENGTH: u64 = 64 * 1024;

#[derive(Clone)]
struct ApiState {
    service: Arc<ManagerService>,
    credentials: Option<Arc<str>>,
}

/// REST router. `credentials` is the `(user, password)` pair required on every
/// request; `None` disables authentication.
pub fn api_router(service: Arc<ManagerService>, credentials: Option<(&str, &str)>) -> Router {
    let state = ApiState { service, credentials: credentials.map(|(u, p)| Arc::from(basic_auth(u, p))) };
    let node = Router::new()
        .route("/node", get(list_nodes))
        .route("/node/{container}", get(get_node))
        .route("/node/{container}/{component}", get(get_component))
        .route("/node/{container}/{component}/log", get(get_log))
        .route("/node/{container}/{component}/{operation}", post(execute));
    Router::new()
        .nest(API_PREFIX, node)
        .layer(middleware::from_fn_with_state(state.clone(), authenticate))
        .with_state(state)
}

async fn authenticate(State(state): State<ApiState>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.credentials {
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(&**expected) {
            return (
                StatusCode::UNAUTHORIZED,
                [(header::WWW_AUTHENTICATE, "Basic realm=\"manager\"")],
                Json(json!({"error": "unauthorized"})),
            )
                .into_response();
        }
    }
    next.run(req).await
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownContainer(_)
            | ServiceError::UnknownComponent(..)
            | ServiceError::UnknownOperation(..) => StatusCode::NOT_FOUND,
            ServiceError::Busy(..) => StatusCode::CONFLICT,
            ServiceError::Unreachable(..) => StatusCode::BAD_GATEWAY,
            ServiceError::Unit(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({"error": self.to_string()}))).into_response()
    }
}

fn status_of(result: &OperationResult) -> StatusCode {
    match result.outcome {
        Outcome::Success => StatusCode::OK,
        Outcome::Failed => StatusCode::INTERNAL_SERVER_ERROR,
        Outcome::Timeout => StatusCode::GATEWAY_TIMEOUT,
        Outcome::Unreachable => StatusCode::BAD_GATEWAY,
    }
}

async fn list_nodes(State(s): State<ApiState>) -> Response {
    Json(s.service.list_nodes().await).into_response()
}

async fn get_node(State(s): State<ApiState>, Path(container): Path<String>) -> Response {
    match s.service.get_node(&container).await {
        Ok(node) => Json(node).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_component(State(s): State<ApiState>, Path((container, component)): Path<(String, String)>) -> Response {
    match s.service.get_component(&container, &component).await {
        Ok(detail) => Json(detail).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn execute(
    State(s): State<ApiState>,
    Path((container, component, operation)): Path<(String, String, String)>,
) -> Response {
    match s.service.execute_operation(&container, &component, &operation).await {
        Ok(result) => (status_of(&result), Json(result)).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    operation: Option<String>,
    #[serde(default)]
    offset: u64,
    length: Option<u64>,
}

async fn get_log(
    State(s): State<ApiState>,
    Path((container, component)): Path<(String, String)>,
    Query(q): Query<LogQuery>,
) -> Response {
    let length = q.length.unwrap_or(DEFAULT_LOG_LENGTH);
    match s.service.get_component_logs(&container, &component, q.operation.as_deref(), q.offset, length).await {
        Ok(text) => ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response(),
        Err(e) => e.into_response(),
    }
}
