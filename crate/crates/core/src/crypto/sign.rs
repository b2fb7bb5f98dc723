//! Ed25519 signatures.
//!
//! Role keys sign through [`sign`]/[`verify`], which tag each signature with
//! the signer's [`RoleTag`]. Ledger members use the raw [`SigningKey`] and
//! [`VerifyingKey`] directly.

use std::fmt;

use ed25519_dalek::Signer as _;
use rand_core::CryptoRngCore;
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::keys::{PublicKey, RoleTag, SecretKey};
use super::CryptoError;

pub const SIGNATURE_LEN: usize = 64;

#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct SigningKey([u8; 32]);

impl SigningKey {
    pub fn generate(rng: &mut (impl CryptoRngCore + ?Sized)) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self(seed)
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self(seed)
    }

    pub fn seed_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        let sk = ed25519_dalek::SigningKey::from_bytes(&self.0);
        VerifyingKey(sk.verifying_key().to_bytes())
    }

    pub fn sign_raw(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        ed25519_dalek::SigningKey::from_bytes(&self.0).sign(message).to_bytes()
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(<redacted>)")
    }
}

/// A validated Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VerifyingKey([u8; 32]);

impl VerifyingKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Result<Self, CryptoError> {
        ed25519_dalek::VerifyingKey::from_bytes(&bytes)
            .map_err(|_| CryptoError::MalformedKey("not an ed25519 point"))?;
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn verify_raw(&self, message: &[u8], signature: &[u8; SIGNATURE_LEN]) -> bool {
        let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(signature);
        vk.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for VerifyingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyingKey({}..)", &hex::encode(self.0)[..12])
    }
}

/// A role signature: the signer's tag plus the Ed25519 signature bytes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub signer: RoleTag,
    pub bytes: [u8; SIGNATURE_LEN],
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({:?}, {}..)", self.signer, &hex::encode(self.bytes)[..12])
    }
}

pub fn sign(secret: &SecretKey, message: &[u8]) -> Signature {
    Signature { signer: secret.role(), bytes: secret.signing().sign_raw(message) }
}

/// True iff `signature` was produced by the secret half of `public` over
/// exactly `message`.
pub fn verify(public: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    signature.signer == public.role() && public.verifying().verify_raw(message, &signature.bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::keys::kem_keygen;
    use crate::crypto::KemAlgorithm;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pair(seed: u64, role: RoleTag) -> crate::crypto::KeyPair {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        kem_keygen(role, 3600, 0, KemAlgorithm::X25519, &mut rng)
    }

    #[test]
    fn round_trip_verifies() {
        let kp = pair(1, RoleTag::AuthForServer);
        let sig = sign(kp.secret(), b"encrypted token bytes");
        assert!(verify(kp.public(), b"encrypted token bytes", &sig));
    }

    #[test]
    fn flipped_message_bit_fails() {
        let kp = pair(1, RoleTag::AuthForServer);
        let msg = b"encrypted token bytes".to_vec();
        let sig = sign(kp.secret(), &msg);
        for i in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[i / 8] ^= 1 << (i % 8);
            assert!(!verify(kp.public(), &m, &sig), "bit {i}");
        }
    }

    #[test]
    fn mismatched_public_key_fails() {
        let a = pair(1, RoleTag::AuthForServer);
        let b = pair(2, RoleTag::AuthForServer);
        let sig = sign(a.secret(), b"m");
        assert!(!verify(b.public(), b"m", &sig));
    }

    #[test]
    fn signer_tag_is_checked() {
        let kp = pair(1, RoleTag::AuthForServer);
        let mut sig = sign(kp.secret(), b"m");
        sig.signer = RoleTag::ServerForAuth;
        assert!(!verify(kp.public(), b"m", &sig));
    }

    #[test]
    fn verifying_key_rejects_non_point() {
        // y = 2 is not on the curve.
        let mut b = [0u8; 32];
        b[0] = 2;
        assert!(VerifyingKey::from_bytes(b).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn sign_verify_holds_for_random_messages(msg in proptest::collection::vec(any::<u8>(), 0..256)) {
            let kp = pair(5, RoleTag::ServerForAuth);
            let sig = sign(kp.secret(), &msg);
            prop_assert!(verify(kp.public(), &msg, &sig));
        }

        #[test]
        fn any_signature_bit_flip_is_rejected(msg in proptest::collection::vec(any::<u8>(), 1..64), bit in 0usize..(SIGNATURE_LEN * 8 + 8)) {
            let kp = pair(6, RoleTag::DeviceForServer);
            let mut sig = sign(kp.secret(), &msg);
            if bit < SIGNATURE_LEN * 8 {
                sig.bytes[bit / 8] ^= 1 << (bit % 8);
            } else {
                let code = sig.signer.code() ^ (1 << (bit % 8));
                match RoleTag::from_code(code) {
                    Some(tag) => sig.signer = tag,
                    None => return Ok(()), // not representable as a Signature
                }
            }
            prop_assert!(!verify(kp.public(), &msg, &sig));
        }
    }
}
