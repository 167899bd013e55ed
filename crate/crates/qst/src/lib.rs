//! Quantum-secured transport at desk scale.
//!
//! The crate wires a simulated BB84 quantum link into two key management
//! entities (KMEs), host-side key managers that prefetch keys and negotiate
//! PSK identities, a PSK-authenticated tunnel protocol (QSTP v1) carried by
//! a pair of TCP proxies, and a one-time-pad message transport. The
//! [`harness`] module orchestrates the whole two-site topology over loopback
//! and drives scripted traffic through it.

pub mod bb84;
pub mod harness;
pub mod kme;
pub mod manager;
pub mod otp;
pub mod qstp;
pub mod types;
