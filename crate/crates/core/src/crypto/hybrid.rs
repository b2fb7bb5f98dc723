//! Public-key encryption as KEM + AEAD, and link-key sealing.
//!
//! `hybrid_encrypt` encapsulates to the recipient's KEM key, derives a
//! ChaCha20-Poly1305 key with HKDF-SHA256 over the shared secret, and binds
//! the recipient key and the encapsulation into the derivation so that no
//! field of the ciphertext can be altered without failing the tag check.

use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce as AeadNonce, Tag};
use hkdf::Hkdf;
use rand_core::CryptoRngCore;
use sha2::Sha256;
use zeroize::Zeroizing;

use super::keys::{PublicKey, SecretKey};
use super::{CryptoError, LinkKey};

const HYBRID_INFO: &[u8] = b"onboard/hybrid/v1";
const LINK_AAD: &[u8] = b"onboard/link/v1";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HybridCiphertext {
    pub encapsulation: Vec<u8>,
    pub aead_nonce: [u8; 12],
    pub body: Vec<u8>,
    pub auth_tag: [u8; 16],
}

/// AEAD output under a pre-shared [`LinkKey`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkCiphertext {
    pub aead_nonce: [u8; 12],
    pub body: Vec<u8>,
    pub auth_tag: [u8; 16],
}

fn derive_key(shared: &[u8; 32], recipient: &PublicKey, encapsulation: &[u8]) -> Zeroizing<[u8; 32]> {
    let hk = Hkdf::<Sha256>::new(None, shared);
    let recipient = recipient.to_bytes();
    let mut okm = Zeroizing::new([0u8; 32]);
    hk.expand_multi_info(&[HYBRID_INFO, &recipient, encapsulation], okm.as_mut())
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    okm
}

pub fn hybrid_encrypt(
    recipient: &PublicKey,
    plaintext: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Result<HybridCiphertext, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let enc = recipient.algorithm().backend().encapsulate(recipient.kem_bytes(), rng)?;
    let key = derive_key(&enc.shared_secret, recipient, &enc.encapsulation);
    let mut aead_nonce = [0u8; 12];
    rng.fill_bytes(&mut aead_nonce);
    let mut body = plaintext.to_vec();
    let tag = ChaCha20Poly1305::new(Key::from_slice(key.as_ref()))
        .encrypt_in_place_detached(AeadNonce::from_slice(&aead_nonce), &[], &mut body)
        .map_err(|_| CryptoError::DecryptionFailure)?;
    Ok(HybridCiphertext { encapsulation: enc.encapsulation, aead_nonce, body, auth_tag: tag.into() })
}

/// Recovers the plaintext, or fails without releasing any of it.
pub fn hybrid_decrypt(secret: &SecretKey, ct: &HybridCiphertext) -> Result<Vec<u8>, CryptoError> {
    let public = secret.public();
    let shared = public.algorithm().backend().decapsulate(secret.kem_bytes(), &ct.encapsulation)?;
    let key = derive_key(&shared, public, &ct.encapsulation);
    let mut body = ct.body.clone();
    ChaCha20Poly1305::new(Key::from_slice(key.as_ref()))
        .decrypt_in_place_detached(AeadNonce::from_slice(&ct.aead_nonce), &[], &mut body, Tag::from_slice(&ct.auth_tag))
        .map_err(|_| CryptoError::DecryptionFailure)?;
    Ok(body)
}

pub fn link_seal(key: &LinkKey, plaintext: &[u8], rng: &mut impl CryptoRngCore) -> Result<LinkCiphertext, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let mut aead_nonce = [0u8; 12];
    rng.fill_bytes(&mut aead_nonce);
    let mut body = plaintext.to_vec();
    let tag = ChaCha20Poly1305::new(Key::from_slice(&key.0))
        .encrypt_in_place_detached(AeadNonce::from_slice(&aead_nonce), LINK_AAD, &mut body)
        .map_err(|_| CryptoError::DecryptionFailure)?;
    Ok(LinkCiphertext { aead_nonce, body, auth_tag: tag.into() })
}

pub fn link_open(key: &LinkKey, ct: &LinkCiphertext) -> Result<Vec<u8>, CryptoError> {
    let mut body = ct.body.clone();
    ChaCha20Poly1305::new(Key::from_slice(&key.0))
        .decrypt_in_place_detached(
            AeadNonce::from_slice(&ct.aead_nonce),
            LINK_AAD,
            &mut body,
            Tag::from_slice(&ct.auth_tag),
        )
        .map_err(|_| CryptoError::DecryptionFailure)?;
    Ok(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{kem_keygen, KemAlgorithm, KeyPair, RoleTag};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn pair(seed: u64, alg: KemAlgorithm) -> KeyPair {
        kem_keygen(RoleTag::AuthForServer, 60, 0, alg, &mut ChaCha20Rng::seed_from_u64(seed))
    }

    fn algorithms() -> Vec<KemAlgorithm> {
        vec![
            KemAlgorithm::X25519,
            #[cfg(feature = "mlkem")]
            KemAlgorithm::MlKem512,
        ]
    }

    /// Every single-bit mutation of every field, applied one at a time.
    fn mutations(ct: &HybridCiphertext) -> Vec<HybridCiphertext> {
        let mut out = Vec::new();
        for i in 0..ct.encapsulation.len() * 8 {
            let mut m = ct.clone();
            m.encapsulation[i / 8] ^= 1 << (i % 8);
            out.push(m);
        }
        for i in 0..96 {
            let mut m = ct.clone();
            m.aead_nonce[i / 8] ^= 1 << (i % 8);
            out.push(m);
        }
        for i in 0..ct.body.len() * 8 {
            let mut m = ct.clone();
            m.body[i / 8] ^= 1 << (i % 8);
            out.push(m);
        }
        for i in 0..128 {
            let mut m = ct.clone();
            m.auth_tag[i / 8] ^= 1 << (i % 8);
            out.push(m);
        }
        out
    }

    #[test]
    fn one_byte_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for alg in algorithms() {
            let kp = pair(1, alg);
            let ct = hybrid_encrypt(kp.public(), &[0x42], &mut rng).unwrap();
            assert_eq!(hybrid_decrypt(kp.secret(), &ct).unwrap(), vec![0x42]);
        }
    }

    #[test]
    fn wrong_key_pair_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for alg in algorithms() {
            let (a, b) = (pair(1, alg), pair(2, alg));
            let ct = hybrid_encrypt(a.public(), b"token", &mut rng).unwrap();
            assert_eq!(hybrid_decrypt(b.secret(), &ct), Err(CryptoError::DecryptionFailure));
        }
    }

    #[test]
    fn flipped_tag_bit_fails() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let kp = pair(1, KemAlgorithm::X25519);
        let mut ct = hybrid_encrypt(kp.public(), b"token", &mut rng).unwrap();
        ct.auth_tag[0] ^= 1;
        assert_eq!(hybrid_decrypt(kp.secret(), &ct), Err(CryptoError::DecryptionFailure));
    }

    #[test]
    fn every_single_bit_mutation_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for alg in algorithms() {
            let kp = pair(4, alg);
            let ct = hybrid_encrypt(kp.public(), b"(T_n, S_a)", &mut rng).unwrap();
            for (i, m) in mutations(&ct).iter().enumerate() {
                assert!(hybrid_decrypt(kp.secret(), m).is_err(), "{alg:?} mutation {i}");
            }
        }
    }

    #[test]
    fn empty_plaintext_is_refused() {
        let kp = pair(1, KemAlgorithm::X25519);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(hybrid_encrypt(kp.public(), b"", &mut rng), Err(CryptoError::EmptyPlaintext));
    }

    #[test]
    fn link_seal_requires_the_same_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let k1 = LinkKey([1; 32]);
        let k2 = LinkKey([2; 32]);
        let ct = link_seal(&k1, b"device data", &mut rng).unwrap();
        assert_eq!(link_open(&k1, &ct).unwrap(), b"device data");
        assert_eq!(link_open(&k2, &ct), Err(CryptoError::DecryptionFailure));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn decrypt_inverts_encrypt(pt in proptest::collection::vec(any::<u8>(), 1..512), seed in any::<u64>()) {
            let kp = pair(9, KemAlgorithm::X25519);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let ct = hybrid_encrypt(kp.public(), &pt, &mut rng).unwrap();
            prop_assert_eq!(hybrid_decrypt(kp.secret(), &ct).unwrap(), pt);
        }

        #[test]
        fn random_bit_flip_is_rejected(pt in proptest::collection::vec(any::<u8>(), 1..64), pick in any::<prop::sample::Index>()) {
            let kp = pair(10, KemAlgorithm::X25519);
            let mut rng = ChaCha20Rng::seed_from_u64(1);
            let ct = hybrid_encrypt(kp.public(), &pt, &mut rng).unwrap();
            let all = mutations(&ct);
            let m = &all[pick.index(all.len())];
            prop_assert!(hybrid_decrypt(kp.secret(), m).is_err());
        }
    }
}
