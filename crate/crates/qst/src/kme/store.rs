//! In-memory key store with per-association serialization and optional
//! append-only journaling for demo restarts.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::wire::KmeStatus;
use crate::types::{QkdKey, SaeId};

/// Capacity limits, reported by the status endpoint.
#[derive(Clone, Copy, Debug)]
pub struct KmeLimits {
    pub max_key_count: usize,
    pub max_keys_per_request: usize,
}

impl Default for KmeLimits {
    fn default() -> Self {
        Self {
            max_key_count: 65_536,
            max_keys_per_request: 128,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KmeError {
    #[error("no key association for master {master} and slave {slave}")]
    UnknownAssociation { master: SaeId, slave: SaeId },
    #[error("keys exhausted: {requested} requested, {available} available")]
    KeysExhausted { requested: usize, available: usize },
    #[error("key size mismatch: association uses {expected_bits} bits, request names {got_bits}")]
    InvalidKeySize { expected_bits: usize, got_bits: usize },
    #[error("unknown or already-consumed key_ID {0}")]
    UnknownKeyId(Uuid),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("journal I/O failure: {0}")]
    Journal(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryState {
    Available,
    Reserved,
    Consumed,
}

#[derive(Debug)]
struct Entry {
    key: Vec<u8>,
    state: EntryState,
}

#[derive(Debug, Default)]
struct Association {
    key_size_bits: usize,
    entries: HashMap<Uuid, Entry>,
    /// Feed-order queue of candidate ids; ids whose state moved past
    /// Available are skipped lazily when serving enc requests.
    order: VecDeque<Uuid>,
    available: usize,
}

type AssocKey = (SaeId, SaeId);

/// One KME's share of a two-site link.
pub struct KmeStore {
    kme_id: String,
    peer_kme_id: String,
    limits: KmeLimits,
    assocs: RwLock<HashMap<AssocKey, Arc<Mutex<Association>>>>,
    journal: Option<Mutex<BufWriter<File>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum JournalRecord {
    Feed {
        master: SaeId,
        slave: SaeId,
        #[serde(rename = "key_ID")]
        key_id: Uuid,
        #[serde(with = "crate::types::base64_bytes")]
        key: Vec<u8>,
    },
    Reserve {
        master: SaeId,
        slave: SaeId,
        #[serde(rename = "key_ID")]
        key_id: Uuid,
    },
    Consume {
        master: SaeId,
        slave: SaeId,
        #[serde(rename = "key_ID")]
        key_id: Uuid,
    },
}

impl KmeStore {
    pub fn new(kme_id: impl Into<String>, peer_kme_id: impl Into<String>, limits: KmeLimits) -> Self {
        Self {
            kme_id: kme_id.into(),
            peer_kme_id: peer_kme_id.into(),
            limits,
            assocs: RwLock::new(HashMap::new()),
            journal: None,
        }
    }

    /// Opens (and replays) an append-only journal so a demo restart starts
    /// from the previous key state.
    pub fn with_journal(
        kme_id: impl Into<String>,
        peer_kme_id: impl Into<String>,
        limits: KmeLimits,
        path: impl AsRef<Path>,
    ) -> Result<Self, KmeError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self::new(kme_id, peer_kme_id, limits);
        if path.exists() {
            store.replay_journal(&path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        store.journal = Some(Mutex::new(BufWriter::new(file)));
        Ok(store)
    }

    pub fn kme_id(&self) -> &str {
        &self.kme_id
    }

    fn replay_journal(&mut self, path: &Path) -> Result<(), KmeError> {
        let reader = BufReader::new(File::open(path)?);
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: JournalRecord = serde_json::from_str(&line).map_err(|e| {
                KmeError::BadRequest(format!("corrupt journal line: {e}"))
            })?;
            match record {
                JournalRecord::Feed { master, slave, key_id, key } => {
                    self.apply_feed(&master, &slave, &[QkdKey::new(key_id, key)], false)?;
                }
                JournalRecord::Reserve { master, slave, key_id } => {
                    self.apply_state(&master, &slave, key_id, EntryState::Reserved)?;
                }
                JournalRecord::Consume { master, slave, key_id } => {
                    self.apply_state(&master, &slave, key_id, EntryState::Consumed)?;
                }
            }
        }
        Ok(())
    }

    fn apply_state(
        &self,
        master: &SaeId,
        slave: &SaeId,
        key_id: Uuid,
        state: EntryState,
    ) -> Result<(), KmeError> {
        let assoc = self.association(master, slave)?;
        let mut assoc = assoc.lock();
        let was_available = match assoc.entries.get_mut(&key_id) {
            Some(entry) => {
                let was = entry.state == EntryState::Available;
                entry.state = state;
                was
            }
            None => return Ok(()),
        };
        if was_available {
            assoc.available -= 1;
        }
        Ok(())
    }

    fn association(&self, master: &SaeId, slave: &SaeId) -> Result<Arc<Mutex<Association>>, KmeError> {
        self.assocs
            .read()
            .get(&(master.clone(), slave.clone()))
            .cloned()
            .ok_or_else(|| KmeError::UnknownAssociation {
                master: master.clone(),
                slave: slave.clone(),
            })
    }

    fn association_or_create(&self, master: &SaeId, slave: &SaeId) -> Arc<Mutex<Association>> {
        let key = (master.clone(), slave.clone());
        if let Some(assoc) = self.assocs.read().get(&key) {
            return assoc.clone();
        }
        self.assocs
            .write()
            .entry(key)
            .or_insert_with(|| Arc::new(Mutex::new(Association::default())))
            .clone()
    }

    fn journal_append(&self, records: &[JournalRecord]) -> Result<(), KmeError> {
        if let Some(journal) = &self.journal {
            let mut writer = journal.lock();
            for record in records {
                serde_json::to_writer(&mut *writer, record)
                    .map_err(|e| KmeError::BadRequest(format!("journal encode: {e}")))?;
                writer.write_all(b"\n")?;
            }
            writer.flush()?;
        }
        Ok(())
    }

    /// Quantum-layer feed: appends keys as available entries for the
    /// association, up to `max_key_count` available entries. Returns the
    /// number accepted; keys beyond capacity are rejected (back-pressure to
    /// the link). Already-known key_IDs are skipped.
    pub fn store_key_pair(
        &self,
        master: &SaeId,
        slave: &SaeId,
        keys: &[QkdKey],
    ) -> Result<usize, KmeError> {
        self.apply_feed(master, slave, keys, true)
    }

    fn apply_feed(
        &self,
        master: &SaeId,
        slave: &SaeId,
        keys: &[QkdKey],
        journal: bool,
    ) -> Result<usize, KmeError> {
        if keys.is_empty() {
            return Ok(0);
        }
        let size_bits = keys[0].key.len() * 8;
        if size_bits == 0 || keys.iter().any(|k| k.key.len() * 8 != size_bits) {
            return Err(KmeError::BadRequest(
                "feed keys must be non-empty and uniform in length".into(),
            ));
        }
        let assoc = self.association_or_create(master, slave);
        let mut assoc = assoc.lock();
        if assoc.key_size_bits == 0 {
            assoc.key_size_bits = size_bits;
        } else if assoc.key_size_bits != size_bits {
            return Err(KmeError::InvalidKeySize {
                expected_bits: assoc.key_size_bits,
                got_bits: size_bits,
            });
        }
        let mut accepted = 0;
        let mut journal_records = Vec::new();
        for key in keys {
            if assoc.available >= self.limits.max_key_count {
                break;
            }
            if assoc.entries.contains_key(&key.key_id) {
                continue;
            }
            assoc.entries.insert(
                key.key_id,
                Entry {
                    key: key.key.clone(),
                    state: EntryState::Available,
                },
            );
            assoc.order.push_back(key.key_id);
            assoc.available += 1;
            accepted += 1;
            if journal {
                journal_records.push(JournalRecord::Feed {
                    master: master.clone(),
                    slave: slave.clone(),
                    key_id: key.key_id,
                    key: key.key.clone(),
                });
            }
        }
        drop(assoc);
        if journal {
            self.journal_append(&journal_records)?;
        }
        Ok(accepted)
    }

    /// Serves `number` available keys for the (master, slave) association,
    /// marking them reserved on this KME. All-or-nothing.
    pub fn get_enc_keys(
        &self,
        master: &SaeId,
        slave: &SaeId,
        number: usize,
        size_bits: Option<usize>,
    ) -> Result<Vec<QkdKey>, KmeError> {
        if number == 0 {
            return Err(KmeError::BadRequest("number must be at least 1".into()));
        }
        if number > self.limits.max_keys_per_request {
            return Err(KmeError::BadRequest(format!(
                "number exceeds max_keys_per_request ({})",
                self.limits.max_keys_per_request
            )));
        }
        let assoc = self.association(master, slave)?;
        let mut assoc = assoc.lock();
        if let Some(got_bits) = size_bits {
            if got_bits != assoc.key_size_bits {
                return Err(KmeError::InvalidKeySize {
                    expected_bits: assoc.key_size_bits,
                    got_bits,
                });
            }
        }
        if assoc.available < number {
            return Err(KmeError::KeysExhausted {
                requested: number,
                available: assoc.available,
            });
        }
        let mut served = Vec::with_capacity(number);
        let mut journal_records = Vec::with_capacity(number);
        while served.len() < number {
            let key_id = assoc
                .order
                .pop_front()
                .expect("available count guarantees queued candidates");
            let reserved = {
                let entry = assoc.entries.get_mut(&key_id).expect("queued id has an entry");
                if entry.state != EntryState::Available {
                    None // stale queue slot for a consumed key
                } else {
                    entry.state = EntryState::Reserved;
                    Some(QkdKey::new(key_id, entry.key.clone()))
                }
            };
            if let Some(key) = reserved {
                assoc.available -= 1;
                served.push(key);
                journal_records.push(JournalRecord::Reserve {
                    master: master.clone(),
                    slave: slave.clone(),
                    key_id,
                });
            }
        }
        drop(assoc);
        self.journal_append(&journal_records)?;
        Ok(served)
    }

    /// Serves the stored keys with the given key_IDs and marks them
    /// consumed. All-or-nothing: any unknown, already-consumed, or duplicate
    /// key_ID fails the whole request with no state change.
    pub fn get_dec_keys(
        &self,
        master: &SaeId,
        slave: &SaeId,
        key_ids: &[Uuid],
    ) -> Result<Vec<QkdKey>, KmeError> {
        if key_ids.is_empty() {
            return Err(KmeError::BadRequest("key_IDs must not be empty".into()));
        }
        if key_ids.len() > self.limits.max_keys_per_request {
            return Err(KmeError::BadRequest(format!(
                "key_IDs exceed max_keys_per_request ({})",
                self.limits.max_keys_per_request
            )));
        }
        let assoc = self.association(master, slave)?;
        let mut assoc = assoc.lock();
        let mut seen = std::collections::HashSet::with_capacity(key_ids.len());
        for &id in key_ids {
            if !seen.insert(id) {
                return Err(KmeError::BadRequest(format!("duplicate key_ID {id} in request")));
            }
            match assoc.entries.get(&id) {
                Some(entry) if entry.state != EntryState::Consumed => {}
                _ => return Err(KmeError::UnknownKeyId(id)),
            }
        }
        let mut served = Vec::with_capacity(key_ids.len());
        let mut journal_records = Vec::with_capacity(key_ids.len());
        for &id in key_ids {
            let was_available = {
                let entry = assoc.entries.get_mut(&id).expect("validated above");
                let was = entry.state == EntryState::Available;
                entry.state = EntryState::Consumed;
                served.push(QkdKey::new(id, entry.key.clone()));
                was
            };
            if was_available {
                assoc.available -= 1;
            }
            journal_records.push(JournalRecord::Consume {
                master: master.clone(),
                slave: slave.clone(),
                key_id: id,
            });
        }
        drop(assoc);
        self.journal_append(&journal_records)?;
        Ok(served)
    }

    /// Current counts and sizes for the association.
    pub fn get_status(&self, master: &SaeId, slave: &SaeId) -> Result<KmeStatus, KmeError> {
        let assoc = self.association(master, slave)?;
        let assoc = assoc.lock();
        Ok(KmeStatus {
            source_kme_id: self.kme_id.clone(),
            target_kme_id: self.peer_kme_id.clone(),
            master_sae_id: master.clone(),
            slave_sae_id: slave.clone(),
            key_size: assoc.key_size_bits,
            stored_key_count: assoc.available,
            max_key_count: self.limits.max_key_count,
            max_keys_per_request: self.limits.max_keys_per_request,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn sae(s: &str) -> SaeId {
        SaeId::new(s).unwrap()
    }

    fn keys(n: usize, len: usize, seed: u64) -> Vec<QkdKey> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut id = [0u8; 16];
                rng.fill_bytes(&mut id);
                let mut key = vec![0u8; len];
                rng.fill_bytes(&mut key);
                QkdKey::new(Uuid::from_bytes(id), key)
            })
            .collect()
    }

    #[test]
    fn feed_then_status_counts_available_keys() {
        let store = KmeStore::new("kme-a", "kme-b", KmeLimits::default());
        let accepted = store.store_key_pair(&sae("a"), &sae("b"), &keys(10, 32, 1)).unwrap();
        assert_eq!(accepted, 10);
        let status = store.get_status(&sae("a"), &sae("b")).unwrap();
        assert_eq!(status.stored_key_count, 10);
        assert_eq!(status.key_size, 256);
    }

    #[test]
    fn feed_respects_capacity() {
        let limits = KmeLimits { max_key_count: 5, max_keys_per_request: 8 };
        let store = KmeStore::new("kme-a", "kme-b", limits);
        assert_eq!(store.store_key_pair(&sae("a"), &sae("b"), &keys(10, 16, 2)).unwrap(), 5);
        assert_eq!(store.store_key_pair(&sae("a"), &sae("b"), &keys(3, 16, 3)).unwrap(), 0);
    }

    #[test]
    fn feed_rejects_nonuniform_or_mismatched_key_sizes() {
        let store = KmeStore::new("kme-a", "kme-b", KmeLimits::default());
        store.store_key_pair(&sae("a"), &sae("b"), &keys(2, 32, 4)).unwrap();
        let err = store.store_key_pair(&sae("a"), &sae("b"), &keys(2, 16, 5)).unwrap_err();
        assert!(matches!(err, KmeError::InvalidKeySize { expected_bits: 256, got_bits: 128 }));
    }

    #[test]
    fn enc_keys_reserve_in_feed_order() {
        let store = KmeStore::new("kme-a", "kme-b", KmeLimits::default());
        let fed = keys(5, 32, 6);
        store.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
        let got = store.get_enc_keys(&sae("a"), &sae("b"), 2, Some(256)).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0], fed[0]);
        assert_eq!(got[1], fed[1]);
        assert_eq!(store.get_status(&sae("a"), &sae("b")).unwrap().stored_key_count, 3);
    }

    #[test]
    fn enc_keys_errors() {
        let store = KmeStore::new("kme-a", "kme-b", KmeLimits::default());
        assert!(matches!(
            store.get_enc_keys(&sae("a"), &sae("nobody"), 1, None),
            Err(KmeError::UnknownAssociation { .. })
        ));
        store.store_key_pair(&sae("a"), &sae("b"), &keys(1, 32, 7)).unwrap();
        assert!(matches!(
            store.get_enc_keys(&sae("a"), &sae("b"), 2, None),
            Err(KmeError::KeysExhausted { requested: 2, available: 1 })
        ));
        assert!(matches!(
            store.get_enc_keys(&sae("a"), &sae("b"), 1, Some(128)),
            Err(KmeError::InvalidKeySize { .. })
        ));
        assert!(store.get_enc_keys(&sae("a"), &sae("b"), 0, None).is_err());
    }

    #[test]
    fn dec_keys_return_fed_bytes_and_are_single_use() {
        let store = KmeStore::new("kme-b", "kme-a", KmeLimits::default());
        let fed = keys(3, 32, 8);
        store.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
        let ids: Vec<Uuid> = fed.iter().map(|k| k.key_id).collect();
        let got = store.get_dec_keys(&sae("a"), &sae("b"), &ids[..2]).unwrap();
        assert_eq!(got, fed[..2].to_vec());
        let err = store.get_dec_keys(&sae("a"), &sae("b"), &ids[..1]).unwrap_err();
        assert!(matches!(err, KmeError::UnknownKeyId(id) if id == ids[0]));
    }

    #[test]
    fn dec_keys_are_all_or_nothing() {
        let store = KmeStore::new("kme-b", "kme-a", KmeLimits::default());
        let fed = keys(3, 32, 9);
        store.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
        let mut ids: Vec<Uuid> = fed.iter().map(|k| k.key_id).collect();
        ids.push(Uuid::nil()); // bogus
        let err = store.get_dec_keys(&sae("a"), &sae("b"), &ids).unwrap_err();
        assert!(matches!(err, KmeError::UnknownKeyId(id) if id == Uuid::nil()));
        // Nothing was consumed.
        assert_eq!(store.get_status(&sae("a"), &sae("b")).unwrap().stored_key_count, 3);
        let good: Vec<Uuid> = fed.iter().map(|k| k.key_id).collect();
        assert_eq!(store.get_dec_keys(&sae("a"), &sae("b"), &good).unwrap().len(), 3);
    }

    #[test]
    fn dec_keys_reject_duplicate_ids_in_one_request() {
        let store = KmeStore::new("kme-b", "kme-a", KmeLimits::default());
        let fed = keys(1, 32, 10);
        store.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
        let err = store
            .get_dec_keys(&sae("a"), &sae("b"), &[fed[0].key_id, fed[0].key_id])
            .unwrap_err();
        assert!(matches!(err, KmeError::BadRequest(_)));
    }

    #[test]
    fn paired_stores_serve_identical_bytes() {
        let kme_a = KmeStore::new("kme-a", "kme-b", KmeLimits::default());
        let kme_b = KmeStore::new("kme-b", "kme-a", KmeLimits::default());
        let fed = keys(20, 32, 11);
        kme_a.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
        kme_b.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
        assert_eq!(
            kme_a.get_status(&sae("a"), &sae("b")).unwrap().stored_key_count,
            kme_b.get_status(&sae("a"), &sae("b")).unwrap().stored_key_count,
        );
        let enc = kme_a.get_enc_keys(&sae("a"), &sae("b"), 4, None).unwrap();
        let ids: Vec<Uuid> = enc.iter().map(|k| k.key_id).collect();
        let dec = kme_b.get_dec_keys(&sae("a"), &sae("b"), &ids).unwrap();
        assert_eq!(enc, dec);
    }

    #[test]
    fn journal_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kme.journal");
        let fed = keys(4, 32, 12);
        let consumed_id;
        {
            let store =
                KmeStore::with_journal("kme-b", "kme-a", KmeLimits::default(), &path).unwrap();
            store.store_key_pair(&sae("a"), &sae("b"), &fed).unwrap();
            consumed_id = fed[1].key_id;
            store.get_dec_keys(&sae("a"), &sae("b"), &[consumed_id]).unwrap();
        }
        let store = KmeStore::with_journal("kme-b", "kme-a", KmeLimits::default(), &path).unwrap();
        assert_eq!(store.get_status(&sae("a"), &sae("b")).unwrap().stored_key_count, 3);
        assert!(matches!(
            store.get_dec_keys(&sae("a"), &sae("b"), &[consumed_id]),
            Err(KmeError::UnknownKeyId(_))
        ));
        let rest: Vec<Uuid> = fed.iter().map(|k| k.key_id).filter(|&i| i != consumed_id).collect();
        assert_eq!(store.get_dec_keys(&sae("a"), &sae("b"), &rest).unwrap().len(), 3);
    }
}
