//! Cryptographic primitives used by every protocol role.
//!
//! Public-key encryption is KEM encapsulation followed by ChaCha20-Poly1305
//! under an HKDF-derived key ([`hybrid`]). Each role key pair bundles a KEM
//! pair with a companion Ed25519 pair under the same [`RoleTag`] ([`keys`]).
//! Transient tokens are RFC 6238 TOTP values ([`totp`]).
//!
//! Every function that needs randomness takes the RNG as an argument, and
//! every function that needs time takes `now` in whole seconds, so runs are
//! reproducible from a seed.

pub mod hybrid;
pub mod kem;
pub mod keys;
pub mod sign;
pub mod totp;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand_core::CryptoRngCore;
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

pub use hybrid::{hybrid_decrypt, hybrid_encrypt, link_open, link_seal, HybridCiphertext, LinkCiphertext};
pub use kem::KemAlgorithm;
pub use keys::{kem_keygen, KeyPair, PublicKey, RoleTag, SecretKey};
pub use sign::{sign, verify, Signature, SigningKey, VerifyingKey};
pub use totp::{totp_generate, totp_verify, TotpSecret, TransientToken, TOTP_DIGITS, TOTP_STEP_SECS};

/// Seconds since the Unix epoch.
pub type Timestamp = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("malformed key: {0}")]
    MalformedKey(&'static str),
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("key pair expired at {expired_at}, now {now}")]
    KeyExpired { expired_at: Timestamp, now: Timestamp },
}

/// Source of protocol time.
pub trait Clock {
    fn now(&self) -> Timestamp;
}

/// Wall-clock time.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

/// A clock that only moves when told to. Used by simulations and tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self(AtomicU64::new(start))
    }

    pub fn advance(&self, secs: u64) -> Timestamp {
        self.0.fetch_add(secs, Ordering::SeqCst) + secs
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        self.0.load(Ordering::SeqCst)
    }
}

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({}..)", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hashes the concatenation of `parts` without an intermediate buffer.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// 16-byte challenge value.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce(pub [u8; 16]);

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

/// Device-chosen random identifier, used in place of a manufacturer serial.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PseudoUuid(pub [u8; 16]);

impl PseudoUuid {
    /// Lower-case hex in 8-4-4-4-12 groups.
    pub fn to_hex(&self) -> String {
        let h = hex::encode(self.0);
        format!("{}-{}-{}-{}-{}", &h[..8], &h[8..12], &h[12..16], &h[16..20], &h[20..])
    }

    pub fn parse(s: &str) -> Option<Self> {
        let compact: String = s.chars().filter(|c| *c != '-').collect();
        let bytes = hex::decode(compact).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for PseudoUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PseudoUuid({})", self.to_hex())
    }
}

impl fmt::Display for PseudoUuid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Long-lived device credential issued at activation.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LongLivedToken(pub [u8; 32]);

impl fmt::Debug for LongLivedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LongLivedToken({}..)", &hex::encode(self.0)[..8])
    }
}

/// Symmetric key shared by an authenticator and a device after
/// network-layer pairing.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct LinkKey(pub [u8; 32]);

impl fmt::Debug for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LinkKey(<redacted>)")
    }
}

pub fn gen_nonce(rng: &mut impl CryptoRngCore) -> Nonce {
    let mut b = [0u8; 16];
    rng.fill_bytes(&mut b);
    Nonce(b)
}

pub fn gen_pseudo_uuid(rng: &mut impl CryptoRngCore) -> PseudoUuid {
    let mut b = [0u8; 16];
    rng.fill_bytes(&mut b);
    PseudoUuid(b)
}

pub fn gen_long_lived_token(rng: &mut impl CryptoRngCore) -> LongLivedToken {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    LongLivedToken(b)
}

pub fn gen_link_key(rng: &mut impl CryptoRngCore) -> LinkKey {
    let mut b = [0u8; 32];
    rng.fill_bytes(&mut b);
    LinkKey(b)
}
