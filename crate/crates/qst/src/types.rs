//! Identifiers and key material shared by the quantum layer, the KMEs and
//! everything downstream.

use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

/// Identifier of a secure application entity: a network address (IP or
/// fully qualified domain name). Non-empty, at most 256 bytes, no
/// whitespace.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SaeId(String);

impl SaeId {
    pub fn new(value: impl Into<String>) -> Result<Self, InvalidSaeId> {
        let value = value.into();
        if value.is_empty() {
            return Err(InvalidSaeId::Empty);
        }
        if value.len() > 256 {
            return Err(InvalidSaeId::TooLong(value.len()));
        }
        if value.chars().any(char::is_whitespace) {
            return Err(InvalidSaeId::Whitespace);
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SaeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for SaeId {
    type Error = InvalidSaeId;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SaeId> for String {
    fn from(id: SaeId) -> String {
        id.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidSaeId {
    #[error("SAE identifier must not be empty")]
    Empty,
    #[error("SAE identifier exceeds 256 bytes ({0})")]
    TooLong(usize),
    #[error("SAE identifier must not contain whitespace")]
    Whitespace,
}

/// A (key_ID, key bytes) pair produced by the quantum layer. The key_ID is
/// a 128-bit value rendered in canonical UUID text form.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QkdKey {
    #[serde(rename = "key_ID")]
    pub key_id: Uuid,
    #[serde(with = "base64_bytes")]
    pub key: Vec<u8>,
}

impl QkdKey {
    pub fn new(key_id: Uuid, key: Vec<u8>) -> Self {
        Self { key_id, key }
    }

    /// key_ID in its 16-byte binary form, as carried by OTP frames.
    pub fn key_id_bytes(&self) -> [u8; 16] {
        *self.key_id.as_bytes()
    }
}

impl fmt::Debug for QkdKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Key bytes stay out of debug output and logs.
        f.debug_struct("QkdKey")
            .field("key_id", &self.key_id)
            .field("len", &self.key.len())
            .finish()
    }
}

/// Standard-alphabet base64 (de)serialization for key bytes, matching the
/// key container JSON of the key delivery API.
pub mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(de)?;
        STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sae_id_accepts_addresses() {
        assert!(SaeId::new("203.0.113.7").is_ok());
        assert!(SaeId::new("kme-a.example.net").is_ok());
    }

    #[test]
    fn sae_id_rejects_bad_values() {
        assert_eq!(SaeId::new(""), Err(InvalidSaeId::Empty));
        assert_eq!(SaeId::new("a b"), Err(InvalidSaeId::Whitespace));
        assert!(matches!(
            SaeId::new("x".repeat(257)),
            Err(InvalidSaeId::TooLong(257))
        ));
    }

    #[test]
    fn qkd_key_serializes_with_base64_and_uuid_text() {
        let key = QkdKey::new(Uuid::nil(), vec![1, 2, 3]);
        let json = serde_json::to_string(&key).unwrap();
        assert_eq!(
            json,
            r#"{"key_ID":"00000000-0000-0000-0000-000000000000","key":"AQID"}"#
        );
        let back: QkdKey = serde_json::from_str(&json).unwrap();
        assert_eq!(back, key);
    }
}
