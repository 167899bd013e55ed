//! Host-side key manager: prefetches keys from the KME into per-peer pools
//! and answers the tunnel's PSK callbacks on demand, implementing both sides
//! of the PSK-identity negotiation.
//!
//! The client side selects the oldest pooled key for the hinted server and
//! hands back a `{"keyId": ..., "clientId": ...}` identity; the server side
//! resolves that identity with a "get keys with key ids" call against its
//! own KME. Keys leave a pool exactly once.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tokio_util::sync::CancellationToken;
use tracing::{debug, warn};
use uuid::Uuid;

use crate::kme::{KmeApi, KmeClientError};
use crate::types::{QkdKey, SaeId};

/// The server's network address, sent to the client as the PSK identity
/// hint. Equals the server SAE identifier byte-for-byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PskHint(pub SaeId);

impl std::fmt::Display for PskHint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// The JSON object the client returns to the server as the PSK identity.
/// Exactly two members; parsing rejects anything missing or extra.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PskIdentity {
    #[serde(rename = "keyId")]
    pub key_id: Uuid,
    #[serde(rename = "clientId")]
    pub client_id: SaeId,
}

impl PskIdentity {
    /// Canonical serialization: `{"keyId":"<key_ID>","clientId":"<addr>"}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("identity always serializes")
    }

    pub fn parse_json(bytes: &[u8]) -> Result<Self, ManagerError> {
        serde_json::from_slice(bytes).map_err(|e| ManagerError::BadIdentity(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManagerError {
    #[error("no keys available for the requested peer")]
    NoKeysAvailable,
    #[error("malformed PSK identity: {0}")]
    BadIdentity(String),
    #[error("unknown or already-consumed key{}", .0.map(|id| format!(" {id}")).unwrap_or_default())]
    UnknownKey(Option<Uuid>),
    #[error("KME transport failure: {0}")]
    Transport(String),
    #[error("KME rejected the request: {0}")]
    Rejected(String),
}

impl From<KmeClientError> for ManagerError {
    fn from(err: KmeClientError) -> Self {
        match err {
            KmeClientError::Exhausted => ManagerError::NoKeysAvailable,
            KmeClientError::UnknownKeyId(id) => ManagerError::UnknownKey(id),
            KmeClientError::UnknownAssociation => ManagerError::UnknownKey(None),
            KmeClientError::Transport(msg) => ManagerError::Transport(msg),
            KmeClientError::Unauthorized => ManagerError::Rejected("unauthorized".into()),
            KmeClientError::BadRequest(msg) => ManagerError::Rejected(msg),
        }
    }
}

/// Watermarks and timing for one manager's pools.
#[derive(Clone, Debug)]
pub struct KeyManagerConfig {
    /// This host's SAE identity; becomes `clientId` in selected identities.
    pub own_sae: SaeId,
    pub key_size_bits: usize,
    /// Prefetch refills whenever a pool drops below this many keys...
    pub low_water: usize,
    /// ...topping it up to this many.
    pub high_water: usize,
    /// Budget for the blocking single-key fetch when a pool is empty.
    pub fallback_timeout: Duration,
    /// Cadence of the background prefetch task.
    pub prefetch_interval: Duration,
}

impl KeyManagerConfig {
    pub fn new(own_sae: SaeId, key_size_bits: usize) -> Self {
        Self {
            own_sae,
            key_size_bits,
            low_water: 16,
            high_water: 64,
            fallback_timeout: Duration::from_secs(2),
            prefetch_interval: Duration::from_millis(200),
        }
    }
}

/// FIFO queue of prefetched keys for one peer SAE.
pub struct KeyPool {
    peer: SaeId,
    entries: Mutex<VecDeque<QkdKey>>,
    /// Serializes refills so concurrent prefetches cannot overfill.
    refill: Mutex<()>,
    kme_calls: AtomicU64,
    consumed: AtomicU64,
}

impl KeyPool {
    fn new(peer: SaeId) -> Self {
        Self {
            peer,
            entries: Mutex::new(VecDeque::new()),
            refill: Mutex::new(()),
            kme_calls: AtomicU64::new(0),
            consumed: AtomicU64::new(0),
        }
    }

    /// Total KME calls made on behalf of this pool (prefetch and fallback).
    pub fn kme_calls(&self) -> u64 {
        self.kme_calls.load(Ordering::SeqCst)
    }

    /// Keys handed out of this pool so far.
    pub fn consumed(&self) -> u64 {
        self.consumed.load(Ordering::SeqCst)
    }

    pub async fn available(&self) -> usize {
        self.entries.lock().await.len()
    }
}

/// Snapshot returned by [`KeyManager::pool_status`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PoolStatus {
    pub peer: SaeId,
    pub available: usize,
    pub kme_calls: u64,
    pub consumed: u64,
}

pub struct KeyManager {
    cfg: KeyManagerConfig,
    kme: Arc<dyn KmeApi>,
    pools: parking_lot::Mutex<HashMap<SaeId, Arc<KeyPool>>>,
    resolve_calls: AtomicU64,
}

impl KeyManager {
    pub fn new(kme: Arc<dyn KmeApi>, cfg: KeyManagerConfig) -> Arc<Self> {
        Arc::new(Self {
            cfg,
            kme,
            pools: parking_lot::Mutex::new(HashMap::new()),
            resolve_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &KeyManagerConfig {
        &self.cfg
    }

    /// The pool for a peer SAE, created on first use.
    pub fn pool(&self, peer: &SaeId) -> Arc<KeyPool> {
        self.pools
            .lock()
            .entry(peer.clone())
            .or_insert_with(|| Arc::new(KeyPool::new(peer.clone())))
            .clone()
    }

    /// Tops the pool up to the high watermark when it has drained below the
    /// low watermark; a no-op otherwise. The refill is clamped to what the
    /// KME reports as stored, so an all-or-nothing batch request cannot
    /// starve the pool against a small store.
    pub async fn prefetch(&self, pool: &KeyPool) -> Result<usize, ManagerError> {
        let _refill = pool.refill.lock().await;
        let len = pool.entries.lock().await.len();
        if len >= self.cfg.low_water {
            return Ok(0);
        }
        let want = self.cfg.high_water - len;

        pool.kme_calls.fetch_add(1, Ordering::SeqCst);
        let status = self.kme.get_status(&pool.peer).await?;
        let number = want
            .min(status.stored_key_count)
            .min(status.max_keys_per_request);
        if number == 0 {
            debug!(peer = %pool.peer, "KME has no keys to prefetch; will retry");
            return Ok(0);
        }

        pool.kme_calls.fetch_add(1, Ordering::SeqCst);
        let keys = self
            .kme
            .get_enc_keys(&pool.peer, number, self.cfg.key_size_bits)
            .await?;
        let fetched = keys.len();
        pool.entries.lock().await.extend(keys);
        debug!(peer = %pool.peer, fetched, "prefetched keys");
        Ok(fetched)
    }

    /// Runs [`Self::prefetch`] for one peer on a fixed cadence until
    /// `shutdown` fires. Errors are logged and retried.
    pub fn spawn_prefetch(
        self: &Arc<Self>,
        peer: SaeId,
        shutdown: CancellationToken,
    ) -> tokio::task::JoinHandle<()> {
        let manager = self.clone();
        tokio::spawn(async move {
            let pool = manager.pool(&peer);
            loop {
                if let Err(err) = manager.prefetch(&pool).await {
                    warn!(peer = %peer, %err, "prefetch failed; will retry");
                }
                tokio::select! {
                    _ = shutdown.cancelled() => break,
                    _ = tokio::time::sleep(manager.cfg.prefetch_interval) => {}
                }
            }
        })
    }

    /// Client side of the negotiation: dequeues the oldest pooled key for
    /// the hinted server and returns the identity naming it. With an empty
    /// pool, falls back to one blocking single-key fetch before giving up.
    pub async fn select_psk(
        &self,
        hint: &PskHint,
        client_addr: &SaeId,
    ) -> Result<(PskIdentity, Vec<u8>), ManagerError> {
        let pool = self.pool(&hint.0);
        let pooled = pool.entries.lock().await.pop_front();
        let key = match pooled {
            Some(key) => key,
            None => {
                pool.kme_calls.fetch_add(1, Ordering::SeqCst);
                let fetch = self.kme.get_enc_keys(&hint.0, 1, self.cfg.key_size_bits);
                match tokio::time::timeout(self.cfg.fallback_timeout, fetch).await {
                    Ok(Ok(mut keys)) if !keys.is_empty() => keys.remove(0),
                    Ok(Ok(_)) => return Err(ManagerError::NoKeysAvailable),
                    Ok(Err(KmeClientError::Exhausted)) => return Err(ManagerError::NoKeysAvailable),
                    Ok(Err(err)) => return Err(err.into()),
                    Err(_elapsed) => return Err(ManagerError::NoKeysAvailable),
                }
            }
        };
        pool.consumed.fetch_add(1, Ordering::SeqCst);
        let identity = PskIdentity {
            key_id: key.key_id,
            client_id: client_addr.clone(),
        };
        Ok((identity, key.key))
    }

    /// Server side of the negotiation: fetches the named key from this
    /// host's KME with the identity's clientId as the master SAE.
    pub async fn resolve_psk(&self, identity: &PskIdentity) -> Result<Vec<u8>, ManagerError> {
        self.resolve_calls.fetch_add(1, Ordering::SeqCst);
        let mut keys = self
            .kme
            .get_dec_keys(&identity.client_id, &[identity.key_id])
            .await?;
        match keys.pop() {
            Some(key) if keys.is_empty() && key.key_id == identity.key_id => Ok(key.key),
            _ => Err(ManagerError::UnknownKey(Some(identity.key_id))),
        }
    }

    /// Dequeues `count` keys at once (one-time-pad material). No fallback:
    /// the pool must already hold enough.
    pub async fn take_keys(&self, peer: &SaeId, count: usize) -> Result<Vec<QkdKey>, ManagerError> {
        let pool = self.pool(peer);
        let mut entries = pool.entries.lock().await;
        if entries.len() < count {
            return Err(ManagerError::NoKeysAvailable);
        }
        let keys: Vec<QkdKey> = entries.drain(..count).collect();
        drop(entries);
        pool.consumed.fetch_add(count as u64, Ordering::SeqCst);
        Ok(keys)
    }

    pub async fn pool_status(&self, peer: &SaeId) -> PoolStatus {
        let pool = self.pool(peer);
        PoolStatus {
            peer: pool.peer.clone(),
            available: pool.available().await,
            kme_calls: pool.kme_calls(),
            consumed: pool.consumed(),
        }
    }

    /// Total dec-key resolutions performed by this manager.
    pub fn resolve_calls(&self) -> u64 {
        self.resolve_calls.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests;
