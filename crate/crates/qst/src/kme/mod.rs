//! Key management entity: stores quantum-layer keys per SAE pair and serves
//! them over an HTTP key-delivery API.
//!
//! Both KMEs of a link receive identical feeds from the quantum layer, so
//! reservation state is purely local: the master's KME marks keys reserved
//! when they are fetched for encryption, the slave's KME marks them consumed
//! when they are fetched by key_ID for decryption.

mod client;
mod service;
mod store;
mod wire;

pub use client::{DirectKmeClient, HttpKmeClient, KmeApi, KmeClientError};
pub use service::{serve, KmeService};
pub use store::{KmeError, KmeLimits, KmeStore};
pub use wire::{ErrorBody, KeyContainer, KeyIdEntry, KeyIdsBody, KmeStatus};
