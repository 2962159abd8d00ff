// SPDX-License-Identifier: MIT OR Apache-2.0

//! HTTP scoring service.
//!
//! `POST /score` takes `{id, mode, hidden_dim, tokens, n_question, n_answer}`
//! (tokens row-major) and answers `{id, p, route, probe_version}`.
//! `GET /health` answers `{version, model_name, layer_index, tau}`.
//! Failures answer `{"error": {"kind", "message"}}` with a 4xx/5xx status.

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{route_record, Route, RoutePolicy};
use crate::error::{Error, Result};
use crate::feature_store::{HiddenStateRecord, SegmentMode};
use crate::probes::{decode_checkpoint, ProbeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub id: String,
    pub mode: SegmentMode,
    pub hidden_dim: usize,
    pub tokens: Vec<f32>,
    pub n_question: usize,
    pub n_answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub p: f64,
    pub route: Route,
    pub probe_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub version: String,
    pub model_name: String,
    pub layer_index: usize,
    pub tau: f64,
}

/// First 16 hex digits of the SHA-256 of the checkpoint bytes.
pub fn probe_version(checkpoint: &[u8]) -> String {
    Sha256::digest(checkpoint)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Immutable after construction; shared by every request.
#[derive(Debug)]
pub struct ServiceState {
    pub probe: ProbeParams,
    pub policy: RoutePolicy,
    pub probe_version: String,
}

impl ServiceState {
    pub fn new(probe: ProbeParams, policy: RoutePolicy, probe_version: String) -> Result<Self> {
        policy.check()?;
        probe.validate()?;
        policy.check_probe(&probe)?;
        Ok(Self {
            probe,
            policy,
            probe_version,
        })
    }

    pub fn load(checkpoint: impl AsRef<Path>, policy: RoutePolicy) -> Result<Self> {
        let path = checkpoint.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::new(decode_checkpoint(&bytes)?, policy, probe_version(&bytes))
    }

    pub fn health(&self) -> HealthResponse {
        HealthResponse {
            version: env!("CARGO_PKG_VERSION").to_string(),
            model_name: self.probe.model_name.clone(),
            layer_index: self.probe.layer_index,
            tau: self.policy.tau,
        }
    }

    /// Score one request exactly as offline evaluation scores the same record.
    pub fn handle(&self, req: ScoreRequest) -> Result<ScoreResponse> {
        if req.mode != self.probe.mode {
            return Err(Error::ModeMismatch(format!(
                "probe reads {} features, request carries {}",
                self.probe.mode, req.mode
            )));
        }
        if req.hidden_dim != self.probe.token_dim {
            return Err(Error::DimensionMismatch(format!(
                "probe reads dim {}, request has {}",
                self.probe.token_dim, req.hidden_dim
            )));
        }
        let record = HiddenStateRecord::new(req.id, 0, req.n_question, req.n_answer, req.hidden_dim, req.tokens)?;
        let d = route_record(&self.probe, &self.policy, &record)?;
        Ok(ScoreResponse {
            id: record.id,
            p: d.p.value(),
            route: d.route,
            probe_version: self.probe_version.clone(),
        })
    }
}

fn error_response(status: StatusCode, kind: &str, message: String) -> Response {
    let body = serde_json::json!({ "error": { "kind": kind, "message": message } });
    (status, Json(body)).into_response()
}

async fn score(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let req: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
    };
    let worker = state.clone();
    match tokio::task::spawn_blocking(move || worker.handle(req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error_response(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), e.to_string()),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<HealthResponse> {
    Json(state.health())
}

pub fn app(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/score", post(score))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(512 << 20))
        .with_state(state)
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}

/// Run until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let addr = listener.local_addr().map_err(|e| Error::io("listener", e))?;
    tracing::info!(%addr, version = %state.probe_version, "serving");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
