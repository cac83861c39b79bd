use std::collections::HashMap;
use std::sync::Arc;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use steerrank_core::service::{RerankRequest, ServiceError, ServiceState};
use steerrank_core::RunConfig;

type Shared = Arc<ServiceState>;

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self.0.to_string(), "status": status.as_u16() }))).into_response()
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn schema(State(s): State<Shared>) -> Response {
    Json(s.schema()).into_response()
}

async fn items(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> Response {
    Json(s.search_items(q.get("query").map_or("", String::as_str))).into_response()
}

async fn history(State(s): State<Shared>, Path(id): Path<String>) -> Response {
    match s.user_history(&id) {
        Ok(h) => Json(h).into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

async fn rerank(State(s): State<Shared>, body: Bytes) -> Response {
    let req: RerankRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ApiError(ServiceError::BadRequest(format!("invalid request body: {e}"))).into_response(),
    };
    match s.rerank(&req) {
        Ok(r) => Json(r).into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema", get(schema))
        .route("/items", get(items))
        .route("/users/{id}/history", get(history))
        .route("/rerank", post(rerank))
        .with_state(state)
}

pub fn serve(cfg: &RunConfig, addr: &str) -> Result<(), crate::CliError> {
    let state = Arc::new(ServiceState::load(cfg)?);
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state)).await.context("serving")
    })?;
    Ok(())
}
