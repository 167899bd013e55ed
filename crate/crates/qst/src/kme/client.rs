//! Client side of the key delivery API.

use std::sync::Arc;

use async_trait::async_trait;
use reqwest::StatusCode;
use uuid::Uuid;

use super::store::{KmeError, KmeStore};
use super::wire::{ErrorBody, KeyContainer, KeyIdsBody, KmeStatus};
use crate::types::{QkdKey, SaeId};

#[derive(Debug, thiserror::Error)]
pub enum KmeClientError {
    #[error("keys exhausted at the KME")]
    Exhausted,
    #[error("unknown key association")]
    UnknownAssociation,
    #[error("unknown or already-consumed key_ID{}", .0.map(|id| format!(" {id}")).unwrap_or_default())]
    UnknownKeyId(Option<Uuid>),
    #[error("request rejected: {0}")]
    BadRequest(String),
    #[error("bearer token rejected")]
    Unauthorized,
    #[error("transport failure: {0}")]
    Transport(String),
}

/// The three key-delivery calls a key manager makes against its KME.
#[async_trait]
pub trait KmeApi: Send + Sync {
    /// "Get key": fetch `number` fresh keys for the (caller, slave) pair.
    async fn get_enc_keys(
        &self,
        slave: &SaeId,
        number: usize,
        size_bits: usize,
    ) -> Result<Vec<QkdKey>, KmeClientError>;

    /// "Get keys with key ids": fetch the keys a master already named.
    async fn get_dec_keys(
        &self,
        master: &SaeId,
        key_ids: &[Uuid],
    ) -> Result<Vec<QkdKey>, KmeClientError>;

    async fn get_status(&self, slave: &SaeId) -> Result<KmeStatus, KmeClientError>;
}

/// HTTP client bound to one KME base URL and one caller identity (via its
/// bearer token).
pub struct HttpKmeClient {
    base_url: String,
    token: String,
    http: reqwest::Client,
}

impl HttpKmeClient {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: token.into(),
            http: reqwest::Client::new(),
        }
    }

    async fn decode_error(response: reqwest::Response) -> KmeClientError {
        let status = response.status();
        let body: Option<ErrorBody> = response.json().await.ok();
        match status {
            StatusCode::SERVICE_UNAVAILABLE => KmeClientError::Exhausted,
            StatusCode::UNAUTHORIZED => KmeClientError::Unauthorized,
            StatusCode::NOT_FOUND => match body.as_ref().and_then(|b| b.offending_key_id) {
                Some(id) => KmeClientError::UnknownKeyId(Some(id)),
                None => KmeClientError::UnknownAssociation,
            },
            _ => KmeClientError::BadRequest(
                body.map(|b| b.message)
                    .unwrap_or_else(|| format!("HTTP {status}")),
            ),
        }
    }
}

#[async_trait]
impl KmeApi for HttpKmeClient {
    async fn get_enc_keys(
        &self,
        slave: &SaeId,
        number: usize,
        size_bits: usize,
    ) -> Result<Vec<QkdKey>, KmeClientError> {
        let url = format!(
            "{}/api/v1/keys/{}/enc_keys?number={number}&size={size_bits}",
            self.base_url, slave
        );
        let response = self
            .http
            .get(url)
            .bearer_auth(&self.token)
            .send()
            .await
            .map_err(|e| KmeClientError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Self::decode_error(response).await);
        }
        let container: KeyContainer = response
            .json()
            .await
            .map_err(|e| KmeClientError::Transport(e.to_string()))?;
        Ok(container.keys)
    }

    async fn get_dec_keys(
        &self,
        master: &SaeId,
        key_ids: &[Uuid],
    ) -> Result<Vec<QkdKey>, KmeClientError> {
        let url = format!("{}/api/v1/keys/{}/dec_keys", self.base_url, master);
        let response = self
            .http
            .post(url)
            .bearer_auth(&self.token)
            .json(&KeyIdsBody::from_ids(key_ids))
            .send()
            .await
            .map_err(|e| KmeClientError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Self::decode_error(response).await);
        }
        let container: KeyContainer = response
            .json()
            .await
            .map_err(|e| KmeClientError::Transport(e.to_string()))?;
        Ok(container.keys)
    }

    async fn get_status(&self, slave: &SaeId) -> Result<KmeStatus, KmeClientError> {
        let url = format!("{}/api/v1/keys/{}/status", self.base_url, slave);
        let response = self
            .http
            .get(url)
            .bearer_auth(&self.token)
            .send()
            .await
            .map_err(|e| KmeClientError::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Self::decode_error(response).await);
        }
        response
            .json()
            .await
            .map_err(|e| KmeClientError::Transport(e.to_string()))
    }
}

/// In-process client used by tests and the single-process demo topology:
/// same contract, no sockets.
pub struct DirectKmeClient {
    store: Arc<KmeStore>,
    caller: SaeId,
}

impl DirectKmeClient {
    pub fn new(store: Arc<KmeStore>, caller: SaeId) -> Self {
        Self { store, caller }
    }
}

impl From<KmeError> for KmeClientError {
    fn from(err: KmeError) -> Self {
        match err {
            KmeError::UnknownAssociation { .. } => KmeClientError::UnknownAssociation,
            KmeError::KeysExhausted { .. } => KmeClientError::Exhausted,
            KmeError::UnknownKeyId(id) => KmeClientError::UnknownKeyId(Some(id)),
            other => KmeClientError::BadRequest(other.to_string()),
        }
    }
}

#[async_trait]
impl KmeApi for DirectKmeClient {
    async fn get_enc_keys(
        &self,
        slave: &SaeId,
        number: usize,
        size_bits: usize,
    ) -> Result<Vec<QkdKey>, KmeClientError> {
        Ok(self
            .store
            .get_enc_keys(&self.caller, slave, number, Some(size_bits))?)
    }

    async fn get_dec_keys(
        &self,
        master: &SaeId,
        key_ids: &[Uuid],
    ) -> Result<Vec<QkdKey>, KmeClientError> {
        Ok(self.store.get_dec_keys(master, &self.caller, key_ids)?)
    }

    async fn get_status(&self, slave: &SaeId) -> Result<KmeStatus, KmeClientError> {
        Ok(self.store.get_status(&self.caller, slave)?)
    }
}
