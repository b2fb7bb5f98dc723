//! Authenticator, device, and server state machines.
//!
//! Roles never touch a channel directly. Each step takes an [`Env`] (clock
//! value, RNG, trace, symbol table) and returns the messages it wants sent;
//! the harness routes them. This keeps every step single-threaded and
//! replayable from a seed.

mod authenticator;
mod device;
mod server;

use std::fmt;

use rand_core::CryptoRngCore;
use thiserror::Error;

use crate::channels::{Actor, SymbolTable, Term, Trace};
use crate::crypto::{hash_parts, CryptoError, Digest, KemAlgorithm, Timestamp, TOTP_STEP_SECS};
use crate::ledger::LedgerError;
use crate::wire::{DecodeError, Message};

pub use authenticator::{AuthPhase, Authenticator};
pub use device::{Device, DevicePhase};
pub use server::{activation_term, DataReceipt, RegistryEntry, Server};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("signature invalid")]
    SignatureInvalid,
    #[error("nonce mismatch")]
    NonceMismatch,
    #[error("key expired at {expired_at} (now {now}); re-login required")]
    KeyExpired { expired_at: Timestamp, now: Timestamp },
    #[error("no established session")]
    NoSession,
    #[error("link key mismatch")]
    LinkKeyMismatch,
    #[error("device not provisioned")]
    NotProvisioned,
    #[error("token expired")]
    TokenExpired,
    #[error("token unknown")]
    TokenUnknown,
    #[error("token consumed")]
    TokenConsumed,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("ledger rejected transaction: {0}")]
    LedgerRejected(LedgerError),
    #[error("unknown device")]
    UnknownDevice,
    #[error("device revoked")]
    RevokedDevice,
    #[error("long-lived token mismatch")]
    TokenMismatch,
    #[error("device already revoked")]
    AlreadyRevoked,
    #[error("device is registered to another authenticator")]
    NotOwner,
    #[error("device id already registered")]
    DuplicateDevice,
    #[error("{role} cannot {action} in phase {phase}")]
    OutOfPhase { role: &'static str, phase: String, action: &'static str },
}

impl ProtocolError {
    /// Stable kebab-case identifier, used in traces and verdict records.
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::SignatureInvalid => "signature-invalid",
            ProtocolError::NonceMismatch => "nonce-mismatch",
            ProtocolError::KeyExpired { .. } => "key-expired",
            ProtocolError::NoSession => "no-session",
            ProtocolError::LinkKeyMismatch => "link-key-mismatch",
            ProtocolError::NotProvisioned => "not-provisioned",
            ProtocolError::TokenExpired => "token-expired",
            ProtocolError::TokenUnknown => "token-unknown",
            ProtocolError::TokenConsumed => "token-consumed",
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::LedgerRejected(_) => "ledger-rejected",
            ProtocolError::UnknownDevice => "unknown-device",
            ProtocolError::RevokedDevice => "revoked-device",
            ProtocolError::TokenMismatch => "token-mismatch",
            ProtocolError::AlreadyRevoked => "already-revoked",
            ProtocolError::NotOwner => "not-owner",
            ProtocolError::DuplicateDevice => "duplicate-device",
            ProtocolError::OutOfPhase { .. } => "out-of-phase",
        }
    }
}

impl From<DecodeError> for ProtocolError {
    fn from(e: DecodeError) -> Self {
        ProtocolError::Malformed(e.to_string())
    }
}

impl From<CryptoError> for ProtocolError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::KeyExpired { expired_at, now } => ProtocolError::KeyExpired { expired_at, now },
            other => ProtocolError::Malformed(other.to_string()),
        }
    }
}

/// Protocol parameters shared by all roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub totp_step: u64,
    /// Lifetime of the authenticator/server session pairs.
    pub session_key_ttl: u64,
    pub device_key_ttl: u64,
    /// Lifetime of the per-device server pair.
    pub server_device_key_ttl: u64,
    pub kem: KemAlgorithm,
    pub api_address: String,
    /// How often a device resends its registration request when no
    /// activation arrives. Zero disables retries.
    pub registration_retries: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            totp_step: TOTP_STEP_SECS,
            session_key_ttl: 86_400,
            device_key_ttl: 30 * 86_400,
            server_device_key_ttl: 365 * 86_400,
            kem: KemAlgorithm::default(),
            api_address: "api.provider.example/onboard".into(),
            registration_retries: 0,
        }
    }
}

/// Everything a step may consume besides role state.
pub struct Env<'a> {
    pub now: Timestamp,
    pub rng: &'a mut dyn CryptoRngCore,
    pub trace: &'a mut Trace,
    pub symbols: &'a mut SymbolTable,
}

/// A message a role wants sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    /// On the pre-authenticated channel between the server and one
    /// authenticator. `to_server` gives the direction.
    Secure { authenticator: u32, to_server: bool, message: Message },
    /// On the attacker-owned network.
    Public { from: Actor, to: Actor, message: Message, term: Term },
}

/// Digest under which a transient token appears in traces.
pub fn token_digest(digits: &str, issued_step: u64) -> Digest {
    hash_parts(&[b"onboard/token", digits.as_bytes(), &issued_step.to_be_bytes()])
}

pub(crate) fn out_of_phase(role: &'static str, phase: impl fmt::Debug, action: &'static str) -> ProtocolError {
    ProtocolError::OutOfPhase { role, phase: format!("{phase:?}"), action }
}
