//! HTTP surface of the key delivery API.
//!
//! Routes (HTTP/1.1, JSON):
//!   GET  /api/v1/keys/{slave_SAE_ID}/enc_keys?number=N&size=BITS
//!   POST /api/v1/keys/{master_SAE_ID}/dec_keys   body {"key_IDs":[{"key_ID":"..."}]}
//!   GET  /api/v1/keys/{slave_SAE_ID}/status
//!
//! Callers authenticate with a static bearer token mapped to their SAE
//! identity; failures return {"message": "...", "offending_key_ID": "..."}.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;
use tracing::info;

use super::store::{KmeError, KmeStore};
use super::wire::{ErrorBody, KeyContainer, KeyIdsBody};
use crate::types::SaeId;

/// A [`KmeStore`] plus the bearer-token identities allowed to call it.
pub struct KmeService {
    store: Arc<KmeStore>,
    tokens: HashMap<String, SaeId>,
}

impl KmeService {
    pub fn new(store: Arc<KmeStore>, tokens: HashMap<String, SaeId>) -> Self {
        Self { store, tokens }
    }

    pub fn store(&self) -> &Arc<KmeStore> {
        &self.store
    }

    fn authenticate(&self, headers: &HeaderMap) -> Result<SaeId, HttpError> {
        let value = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(HttpError::unauthorized)?;
        let token = value.strip_prefix("Bearer ").ok_or_else(HttpError::unauthorized)?;
        self.tokens
            .get(token)
            .cloned()
            .ok_or_else(HttpError::unauthorized)
    }
}

struct HttpError {
    status: StatusCode,
    body: ErrorBody,
}

impl HttpError {
    fn unauthorized() -> Self {
        Self {
            status: StatusCode::UNAUTHORIZED,
            body: ErrorBody {
                message: "missing or unknown bearer token".into(),
                offending_key_id: None,
            },
        }
    }

    fn bad_sae(err: crate::types::InvalidSaeId) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                message: format!("invalid SAE identifier: {err}"),
                offending_key_id: None,
            },
        }
    }
}

impl From<KmeError> for HttpError {
    fn from(err: KmeError) -> Self {
        let status = match &err {
            KmeError::UnknownAssociation { .. } | KmeError::UnknownKeyId(_) => StatusCode::NOT_FOUND,
            KmeError::KeysExhausted { .. } => StatusCode::SERVICE_UNAVAILABLE,
            KmeError::InvalidKeySize { .. } | KmeError::BadRequest(_) => StatusCode::BAD_REQUEST,
            KmeError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let offending_key_id = match &err {
            KmeError::UnknownKeyId(id) => Some(*id),
            _ => None,
        };
        Self {
            status,
            body: ErrorBody {
                message: err.to_string(),
                offending_key_id,
            },
        }
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Deserialize)]
struct EncParams {
    number: Option<usize>,
    size: Option<usize>,
}

async fn enc_keys(
    State(service): State<Arc<KmeService>>,
    Path(slave): Path<String>,
    Query(params): Query<EncParams>,
    headers: HeaderMap,
) -> Result<Json<KeyContainer>, HttpError> {
    let caller = service.authenticate(&headers)?;
    let slave = SaeId::new(slave).map_err(HttpError::bad_sae)?;
    let keys = service
        .store
        .get_enc_keys(&caller, &slave, params.number.unwrap_or(1), params.size)?;
    Ok(Json(KeyContainer { keys }))
}

async fn dec_keys(
    State(service): State<Arc<KmeService>>,
    Path(master): Path<String>,
    headers: HeaderMap,
    Json(body): Json<KeyIdsBody>,
) -> Result<Json<KeyContainer>, HttpError> {
    let caller = service.authenticate(&headers)?;
    let master = SaeId::new(master).map_err(HttpError::bad_sae)?;
    let ids: Vec<uuid::Uuid> = body.key_ids.iter().map(|e| e.key_id).collect();
    let keys = service.store.get_dec_keys(&master, &caller, &ids)?;
    Ok(Json(KeyContainer { keys }))
}

async fn status(
    State(service): State<Arc<KmeService>>,
    Path(slave): Path<String>,
    headers: HeaderMap,
) -> Result<Json<super::wire::KmeStatus>, HttpError> {
    let caller = service.authenticate(&headers)?;
    let slave = SaeId::new(slave).map_err(HttpError::bad_sae)?;
    Ok(Json(service.store.get_status(&caller, &slave)?))
}

pub fn router(service: Arc<KmeService>) -> Router {
    Router::new()
        .route("/api/v1/keys/{slave_sae_id}/enc_keys", get(enc_keys))
        .route("/api/v1/keys/{master_sae_id}/dec_keys", post(dec_keys))
        .route("/api/v1/keys/{slave_sae_id}/status", get(status))
        .with_state(service)
}

/// Serves the API on an already-bound listener until `shutdown` fires.
pub async fn serve(
    service: Arc<KmeService>,
    listener: TcpListener,
    shutdown: CancellationToken,
) -> std::io::Result<()> {
    let kme_id = service.store.kme_id().to_string();
    let addr = listener.local_addr()?;
    info!(%kme_id, %addr, "key delivery API listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async move { shutdown.cancelled().await })
        .await
}
