//! JSON bodies of the key-delivery API, pinned for bit-exact interop tests.

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::types::{QkdKey, SaeId};

/// Response body of `enc_keys` and `dec_keys`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyContainer {
    pub keys: Vec<QkdKey>,
}

/// One requested key_ID inside [`KeyIdsBody`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIdEntry {
    #[serde(rename = "key_ID")]
    pub key_id: Uuid,
}

/// Request body of `dec_keys`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIdsBody {
    #[serde(rename = "key_IDs")]
    pub key_ids: Vec<KeyIdEntry>,
}

impl KeyIdsBody {
    pub fn from_ids(ids: &[Uuid]) -> Self {
        Self {
            key_ids: ids.iter().map(|&key_id| KeyIdEntry { key_id }).collect(),
        }
    }
}

/// Response body of the `status` endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmeStatus {
    pub source_kme_id: String,
    pub target_kme_id: String,
    pub master_sae_id: SaeId,
    pub slave_sae_id: SaeId,
    /// Key size in bits.
    pub key_size: usize,
    /// Available (not reserved, not consumed) keys for the association.
    pub stored_key_count: usize,
    pub max_key_count: usize,
    pub max_keys_per_request: usize,
}

/// Error body returned by every failing endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub message: String,
    #[serde(rename = "offending_key_ID", skip_serializing_if = "Option::is_none", default)]
    pub offending_key_id: Option<Uuid>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_ids_body_shape_is_pinned() {
        let id = Uuid::parse_str("bc490419-7d60-487f-adc1-4ddcc177c139").unwrap();
        let body = KeyIdsBody::from_ids(&[id]);
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"key_IDs":[{"key_ID":"bc490419-7d60-487f-adc1-4ddcc177c139"}]}"#
        );
    }

    #[test]
    fn error_body_omits_absent_offender() {
        let body = ErrorBody {
            message: "keys exhausted".into(),
            offending_key_id: None,
        };
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"message":"keys exhausted"}"#
        );
    }
}
