use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use uuid::Uuid;

use super::*;
use crate::kme::{DirectKmeClient, KmeLimits, KmeStore};
use crate::types::{QkdKey, SaeId};

fn sae(s: &str) -> SaeId {
    SaeId::new(s).unwrap()
}

fn make_keys(n: usize, seed: u64) -> Vec<QkdKey> {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut id = [0u8; 16];
            rng.fill_bytes(&mut id);
            let mut key = vec![0u8; 32];
            rng.fill_bytes(&mut key);
            QkdKey::new(Uuid::from_bytes(id), key)
        })
        .collect()
}

struct Pair {
    client_km: Arc<KeyManager>,
    server_km: Arc<KeyManager>,
    client_sae: SaeId,
    server_sae: SaeId,
}

/// Two KMEs fed identically; the client manager talks to KME A, the server
/// manager to KME B, mirroring the two-site layout.
fn paired_managers(keys: &[QkdKey], low: usize, high: usize) -> Pair {
    let client_sae = sae("198.51.100.2");
    let server_sae = sae("203.0.113.7");
    let kme_a = Arc::new(KmeStore::new("kme-a", "kme-b", KmeLimits::default()));
    let kme_b = Arc::new(KmeStore::new("kme-b", "kme-a", KmeLimits::default()));
    kme_a.store_key_pair(&client_sae, &server_sae, keys).unwrap();
    kme_b.store_key_pair(&client_sae, &server_sae, keys).unwrap();

    let mut client_cfg = KeyManagerConfig::new(client_sae.clone(), 256);
    client_cfg.low_water = low;
    client_cfg.high_water = high;
    client_cfg.fallback_timeout = Duration::from_millis(500);
    let client_km = KeyManager::new(
        Arc::new(DirectKmeClient::new(kme_a, client_sae.clone())),
        client_cfg,
    );
    let server_km = KeyManager::new(
        Arc::new(DirectKmeClient::new(kme_b, server_sae.clone())),
        KeyManagerConfig::new(server_sae.clone(), 256),
    );
    Pair {
        client_km,
        server_km,
        client_sae,
        server_sae,
    }
}

#[tokio::test]
async fn prefetch_tops_up_to_high_water() {
    let pair = paired_managers(&make_keys(32, 1), 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    // Seed the pool with 2 entries by fetching then draining to simulate
    // prior use: run prefetch once (0 -> 8), consume 6.
    pair.client_km.prefetch(&pool).await.unwrap();
    assert_eq!(pool.available().await, 8);
    for _ in 0..6 {
        pair.client_km
            .select_psk(&PskHint(pair.server_sae.clone()), &pair.client_sae)
            .await
            .unwrap();
    }
    assert_eq!(pool.available().await, 2);
    let fetched = pair.client_km.prefetch(&pool).await.unwrap();
    assert_eq!(fetched, 6);
    assert_eq!(pool.available().await, 8);
}

#[tokio::test]
async fn prefetch_is_a_noop_at_or_above_low_water() {
    let pair = paired_managers(&make_keys(32, 2), 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    pair.client_km.prefetch(&pool).await.unwrap();
    for _ in 0..3 {
        pair.client_km
            .select_psk(&PskHint(pair.server_sae.clone()), &pair.client_sae)
            .await
            .unwrap();
    }
    assert_eq!(pool.available().await, 5); // still above low=4
    let calls_before = pool.kme_calls();
    assert_eq!(pair.client_km.prefetch(&pool).await.unwrap(), 0);
    assert_eq!(pool.kme_calls(), calls_before);
}

#[tokio::test]
async fn warm_pool_handshake_makes_no_kme_calls() {
    let pair = paired_managers(&make_keys(32, 3), 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    pair.client_km.prefetch(&pool).await.unwrap();
    let calls_before = pool.kme_calls();
    let (identity, client_psk) = pair
        .client_km
        .select_psk(&PskHint(pair.server_sae.clone()), &pair.client_sae)
        .await
        .unwrap();
    assert_eq!(pool.kme_calls(), calls_before, "warm select must not call the KME");
    let server_psk = pair.server_km.resolve_psk(&identity).await.unwrap();
    assert_eq!(client_psk, server_psk);
}

#[tokio::test]
async fn empty_pool_falls_back_with_one_kme_call() {
    let pair = paired_managers(&make_keys(8, 4), 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    assert_eq!(pool.available().await, 0);
    let calls_before = pool.kme_calls();
    let (identity, psk) = pair
        .client_km
        .select_psk(&PskHint(pair.server_sae.clone()), &pair.client_sae)
        .await
        .unwrap();
    assert_eq!(pool.kme_calls() - calls_before, 1);
    let resolved = pair.server_km.resolve_psk(&identity).await.unwrap();
    assert_eq!(psk, resolved);
}

#[tokio::test]
async fn select_is_fifo_and_single_use() {
    let keys = make_keys(8, 5);
    let pair = paired_managers(&keys, 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    pair.client_km.prefetch(&pool).await.unwrap();
    let hint = PskHint(pair.server_sae.clone());
    let (id1, psk1) = pair.client_km.select_psk(&hint, &pair.client_sae).await.unwrap();
    let (id2, _) = pair.client_km.select_psk(&hint, &pair.client_sae).await.unwrap();
    assert_eq!(id1.key_id, keys[0].key_id, "oldest key first");
    assert_eq!(psk1, keys[0].key);
    assert_ne!(id1.key_id, id2.key_id);
    assert_eq!(pool.available().await, 6);
    assert_eq!(pool.consumed(), 2);
}

#[tokio::test]
async fn exhausted_kme_and_empty_pool_abort_cleanly() {
    let pair = paired_managers(&make_keys(1, 6), 0, 4);
    let hint = PskHint(pair.server_sae.clone());
    // Drain the only key via the fallback path.
    pair.client_km.select_psk(&hint, &pair.client_sae).await.unwrap();
    let err = pair.client_km.select_psk(&hint, &pair.client_sae).await.unwrap_err();
    assert!(matches!(err, ManagerError::NoKeysAvailable));
}

#[tokio::test]
async fn resolve_rejects_reused_key_ids() {
    let pair = paired_managers(&make_keys(4, 7), 2, 4);
    let hint = PskHint(pair.server_sae.clone());
    let (identity, _) = pair.client_km.select_psk(&hint, &pair.client_sae).await.unwrap();
    pair.server_km.resolve_psk(&identity).await.unwrap();
    let err = pair.server_km.resolve_psk(&identity).await.unwrap_err();
    assert!(matches!(err, ManagerError::UnknownKey(Some(id)) if id == identity.key_id));
}

#[tokio::test]
async fn take_keys_is_all_or_nothing() {
    let pair = paired_managers(&make_keys(8, 8), 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    pair.client_km.prefetch(&pool).await.unwrap();
    assert!(matches!(
        pair.client_km.take_keys(&pair.server_sae, 9).await,
        Err(ManagerError::NoKeysAvailable)
    ));
    assert_eq!(pool.available().await, 8);
    let taken = pair.client_km.take_keys(&pair.server_sae, 3).await.unwrap();
    assert_eq!(taken.len(), 3);
    assert_eq!(pool.available().await, 5);
}

#[tokio::test]
async fn pool_status_reports_counters() {
    let pair = paired_managers(&make_keys(16, 9), 4, 8);
    let pool = pair.client_km.pool(&pair.server_sae);
    pair.client_km.prefetch(&pool).await.unwrap();
    let status = pair.client_km.pool_status(&pair.server_sae).await;
    assert_eq!(status.available, 8);
    assert_eq!(status.peer, pair.server_sae);
    pair.client_km
        .select_psk(&PskHint(pair.server_sae.clone()), &pair.client_sae)
        .await
        .unwrap();
    let after = pair.client_km.pool_status(&pair.server_sae).await;
    assert_eq!(after.available, 7);
    assert_eq!(after.consumed, 1);
    assert!(after.kme_calls >= status.kme_calls);
}

#[test]
fn identity_serializes_to_the_pinned_shape() {
    let identity = PskIdentity {
        key_id: Uuid::parse_str("bc490419-7d60-487f-adc1-4ddcc177c139").unwrap(),
        client_id: sae("198.51.100.2"),
    };
    assert_eq!(
        identity.to_json(),
        r#"{"keyId":"bc490419-7d60-487f-adc1-4ddcc177c139","clientId":"198.51.100.2"}"#
    );
}

#[test]
fn identity_parse_is_strict() {
    let ok = r#"{"keyId":"bc490419-7d60-487f-adc1-4ddcc177c139","clientId":"198.51.100.2"}"#;
    assert!(PskIdentity::parse_json(ok.as_bytes()).is_ok());
    let extra = r#"{"keyId":"bc490419-7d60-487f-adc1-4ddcc177c139","clientId":"a","note":"x"}"#;
    assert!(matches!(
        PskIdentity::parse_json(extra.as_bytes()),
        Err(ManagerError::BadIdentity(_))
    ));
    let missing = r#"{"keyId":"bc490419-7d60-487f-adc1-4ddcc177c139"}"#;
    assert!(PskIdentity::parse_json(missing.as_bytes()).is_err());
    assert!(PskIdentity::parse_json(b"not json").is_err());
}

proptest! {
    #[test]
    fn identity_round_trips(bytes in prop::array::uniform16(any::<u8>()), host in "[a-z0-9.-]{1,40}") {
        let identity = PskIdentity {
            key_id: Uuid::from_bytes(bytes),
            client_id: SaeId::new(host).unwrap(),
        };
        let parsed = PskIdentity::parse_json(identity.to_json().as_bytes()).unwrap();
        prop_assert_eq!(parsed, identity);
    }
}
