use std::fmt;

use rand_core::CryptoRngCore;
use zeroize::Zeroizing;

use super::kem::KemAlgorithm;
use super::sign::{SigningKey, VerifyingKey};
use super::{CryptoError, Timestamp};

/// Which end of which relationship a key pair serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RoleTag {
    /// Server key for one authenticator session.
    ServerForAuth,
    /// Authenticator key for its server session.
    AuthForServer,
    /// Device key, generated on the device for its server.
    DeviceForServer,
    /// Per-device server key issued at activation.
    ServerForDevice,
}

impl RoleTag {
    pub fn code(self) -> u8 {
        match self {
            RoleTag::ServerForAuth => 1,
            RoleTag::AuthForServer => 2,
            RoleTag::DeviceForServer => 3,
            RoleTag::ServerForDevice => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => RoleTag::ServerForAuth,
            2 => RoleTag::AuthForServer,
            3 => RoleTag::DeviceForServer,
            4 => RoleTag::ServerForDevice,
            _ => return None,
        })
    }
}

/// Public half of a role key pair: a KEM public key and an Ed25519
/// verifying key bound to one [`RoleTag`].
///
/// Byte layout: `role (1) | kem algorithm (1) | kem public key | ed25519 (32)`.
/// The KEM key length is fixed by the algorithm.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey {
    role: RoleTag,
    algorithm: KemAlgorithm,
    kem: Vec<u8>,
    verifying: VerifyingKey,
}

impl PublicKey {
    pub fn role(&self) -> RoleTag {
        self.role
    }

    pub fn algorithm(&self) -> KemAlgorithm {
        self.algorithm
    }

    pub fn kem_bytes(&self) -> &[u8] {
        &self.kem
    }

    pub fn verifying(&self) -> &VerifyingKey {
        &self.verifying
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.kem.len() + 32);
        out.push(self.role.code());
        out.push(self.algorithm.code());
        out.extend_from_slice(&self.kem);
        out.extend_from_slice(self.verifying.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let [role, alg, rest @ ..] = bytes else {
            return Err(CryptoError::MalformedKey("public key too short"));
        };
        let role = RoleTag::from_code(*role).ok_or(CryptoError::MalformedKey("unknown role tag"))?;
        let algorithm = KemAlgorithm::from_code(*alg).ok_or(CryptoError::MalformedKey("unknown KEM algorithm"))?;
        let kem_len = algorithm.backend().public_key_len();
        if rest.len() != kem_len + 32 {
            return Err(CryptoError::MalformedKey("public key length does not match algorithm"));
        }
        let (kem, vk) = rest.split_at(kem_len);
        let verifying = VerifyingKey::from_bytes(vk.try_into().expect("length checked"))?;
        Ok(Self { role, algorithm, kem: kem.to_vec(), verifying })
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({:?}, {:?}, {}..)", self.role, self.algorithm, &hex::encode(&self.kem)[..12])
    }
}

/// Secret half of a role key pair. Never leaves its owner in encoded form.
#[derive(Clone)]
pub struct SecretKey {
    public: PublicKey,
    kem: Zeroizing<Vec<u8>>,
    signing: SigningKey,
}

impl SecretKey {
    pub fn role(&self) -> RoleTag {
        self.public.role
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn kem_bytes(&self) -> &[u8] {
        &self.kem
    }

    pub fn signing(&self) -> &SigningKey {
        &self.signing
    }

    /// KEM secret followed by the Ed25519 seed. Only symbolic-attacker
    /// bookkeeping and leak scans should need this.
    pub fn expose_bytes(&self) -> Vec<u8> {
        let mut out = self.kem.to_vec();
        out.extend_from_slice(self.signing.seed_bytes());
        out
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:?}, <redacted>)", self.public.role)
    }
}

/// A role key pair with a validity window.
#[derive(Clone, Debug)]
pub struct KeyPair {
    role_tag: RoleTag,
    public: PublicKey,
    secret: SecretKey,
    created_at: Timestamp,
    ttl: u64,
}

impl KeyPair {
    pub fn role_tag(&self) -> RoleTag {
        self.role_tag
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }

    pub fn ttl(&self) -> u64 {
        self.ttl
    }

    pub fn expires_at(&self) -> Timestamp {
        self.created_at.saturating_add(self.ttl)
    }

    pub fn is_expired(&self, now: Timestamp) -> bool {
        now > self.expires_at()
    }

    pub fn ensure_fresh(&self, now: Timestamp) -> Result<(), CryptoError> {
        if self.is_expired(now) {
            Err(CryptoError::KeyExpired { expired_at: self.expires_at(), now })
        } else {
            Ok(())
        }
    }

    /// Freshness-checked secret access; every consumer of a pair goes
    /// through here.
    pub fn secret_at(&self, now: Timestamp) -> Result<&SecretKey, CryptoError> {
        self.ensure_fresh(now)?;
        Ok(&self.secret)
    }
}

/// Generates a KEM pair and its companion signing pair for `role`.
///
/// # Panics
///
/// If `ttl` is zero.
pub fn kem_keygen(
    role: RoleTag,
    ttl: u64,
    now: Timestamp,
    algorithm: KemAlgorithm,
    rng: &mut impl CryptoRngCore,
) -> KeyPair {
    assert!(ttl > 0, "key pair ttl must be positive");
    let (kem_public, kem_secret) = algorithm.backend().keygen(rng);
    let signing = SigningKey::generate(rng);
    let public = PublicKey { role, algorithm, kem: kem_public, verifying: signing.verifying_key() };
    let secret = SecretKey { public: public.clone(), kem: kem_secret, signing };
    KeyPair { role_tag: role, public, secret, created_at: now, ttl }
}
