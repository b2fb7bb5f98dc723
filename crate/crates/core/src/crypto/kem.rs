//! Key encapsulation backends.
//!
//! X25519 is the default. ML-KEM-512 is available with the `mlkem` feature.
//! Both are driven entirely by the caller's RNG so key generation and
//! encapsulation replay exactly under a fixed seed.

use rand_core::CryptoRngCore;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};
use zeroize::Zeroizing;

use super::CryptoError;

/// Output of a successful encapsulation.
pub struct Encapsulated {
    pub shared_secret: Zeroizing<[u8; 32]>,
    pub encapsulation: Vec<u8>,
}

/// A key encapsulation mechanism.
pub trait Kem: Sync {
    fn algorithm(&self) -> KemAlgorithm;
    /// Returns `(public, secret)` encodings.
    fn keygen(&self, rng: &mut dyn CryptoRngCore) -> (Vec<u8>, Zeroizing<Vec<u8>>);
    fn encapsulate(&self, public: &[u8], rng: &mut dyn CryptoRngCore) -> Result<Encapsulated, CryptoError>;
    fn decapsulate(&self, secret: &[u8], encapsulation: &[u8]) -> Result<Zeroizing<[u8; 32]>, CryptoError>;
    fn public_key_len(&self) -> usize;
    fn secret_key_len(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum KemAlgorithm {
    #[default]
    X25519,
    #[cfg(feature = "mlkem")]
    MlKem512,
}

impl KemAlgorithm {
    pub fn backend(self) -> &'static dyn Kem {
        match self {
            KemAlgorithm::X25519 => &X25519Kem,
            #[cfg(feature = "mlkem")]
            KemAlgorithm::MlKem512 => &mlkem::MlKem512Kem,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            KemAlgorithm::X25519 => 1,
            #[cfg(feature = "mlkem")]
            KemAlgorithm::MlKem512 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(KemAlgorithm::X25519),
            #[cfg(feature = "mlkem")]
            2 => Some(KemAlgorithm::MlKem512),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KemAlgorithm::X25519 => "x25519",
            #[cfg(feature = "mlkem")]
            KemAlgorithm::MlKem512 => "ml-kem-512",
        }
    }
}

impl std::fmt::Display for KemAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KemAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "x25519" => Ok(KemAlgorithm::X25519),
            #[cfg(feature = "mlkem")]
            "ml-kem-512" | "mlkem512" => Ok(KemAlgorithm::MlKem512),
            #[cfg(not(feature = "mlkem"))]
            "ml-kem-512" | "mlkem512" => Err("ML-KEM-512 needs the `mlkem` feature".into()),
            _ => Err(format!("unknown KEM `{s}` (expected x25519 or ml-kem-512)")),
        }
    }
}

pub struct X25519Kem;

impl Kem for X25519Kem {
    fn algorithm(&self) -> KemAlgorithm {
        KemAlgorithm::X25519
    }

    fn keygen(&self, rng: &mut dyn CryptoRngCore) -> (Vec<u8>, Zeroizing<Vec<u8>>) {
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(seed.as_mut());
        let secret = StaticSecret::from(*seed);
        let public = XPublic::from(&secret);
        (public.as_bytes().to_vec(), Zeroizing::new(secret.to_bytes().to_vec()))
    }

    fn encapsulate(&self, public: &[u8], rng: &mut dyn CryptoRngCore) -> Result<Encapsulated, CryptoError> {
        let public: [u8; 32] =
            public.try_into().map_err(|_| CryptoError::MalformedKey("x25519 public key must be 32 bytes"))?;
        let mut seed = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(seed.as_mut());
        let ephemeral = StaticSecret::from(*seed);
        let shared = ephemeral.diffie_hellman(&XPublic::from(public));
        if !shared.was_contributory() {
            return Err(CryptoError::MalformedKey("x25519 public key has low order"));
        }
        Ok(Encapsulated {
            shared_secret: Zeroizing::new(shared.to_bytes()),
            encapsulation: XPublic::from(&ephemeral).as_bytes().to_vec(),
        })
    }

    fn decapsulate(&self, secret: &[u8], encapsulation: &[u8]) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
        let secret: [u8; 32] = secret.try_into().map_err(|_| CryptoError::DecryptionFailure)?;
        let ephemeral: [u8; 32] = encapsulation.try_into().map_err(|_| CryptoError::DecryptionFailure)?;
        let shared = StaticSecret::from(secret).diffie_hellman(&XPublic::from(ephemeral));
        if !shared.was_contributory() {
            return Err(CryptoError::DecryptionFailure);
        }
        Ok(Zeroizing::new(shared.to_bytes()))
    }

    fn public_key_len(&self) -> usize {
        32
    }

    fn secret_key_len(&self) -> usize {
        32
    }
}

#[cfg(feature = "mlkem")]
mod mlkem {
    use ml_kem::kem::Decapsulate;
    use ml_kem::{EncapsulateDeterministic, Encoded, EncodedSizeUser, KemCore, MlKem512, B32};
    use rand_core::CryptoRngCore;
    use zeroize::Zeroizing;

    use super::{Encapsulated, Kem, KemAlgorithm};
    use crate::crypto::CryptoError;

    type Dk = <MlKem512 as KemCore>::DecapsulationKey;
    type Ek = <MlKem512 as KemCore>::EncapsulationKey;

    const EK_LEN: usize = 800;
    const DK_LEN: usize = 1632;

    pub struct MlKem512Kem;

    fn random_b32(rng: &mut dyn CryptoRngCore) -> B32 {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        B32::from(b)
    }

    impl Kem for MlKem512Kem {
        fn algorithm(&self) -> KemAlgorithm {
            KemAlgorithm::MlKem512
        }

        fn keygen(&self, rng: &mut dyn CryptoRngCore) -> (Vec<u8>, Zeroizing<Vec<u8>>) {
            let d = random_b32(rng);
            let z = random_b32(rng);
            let (dk, ek) = MlKem512::generate_deterministic(&d, &z);
            (ek.as_bytes().to_vec(), Zeroizing::new(dk.as_bytes().to_vec()))
        }

        fn encapsulate(&self, public: &[u8], rng: &mut dyn CryptoRngCore) -> Result<Encapsulated, CryptoError> {
            let enc = Encoded::<Ek>::try_from(public)
                .map_err(|_| CryptoError::MalformedKey("ML-KEM-512 encapsulation key must be 800 bytes"))?;
            let ek = Ek::from_bytes(&enc);
            let m = random_b32(rng);
            let (ct, ss) = ek
                .encapsulate_deterministic(&m)
                .map_err(|_| CryptoError::MalformedKey("ML-KEM-512 encapsulation failed"))?;
            let mut shared = Zeroizing::new([0u8; 32]);
            shared.copy_from_slice(ss.as_slice());
            Ok(Encapsulated { shared_secret: shared, encapsulation: ct.to_vec() })
        }

        fn decapsulate(&self, secret: &[u8], encapsulation: &[u8]) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
            let enc = Encoded::<Dk>::try_from(secret).map_err(|_| CryptoError::DecryptionFailure)?;
            let dk = Dk::from_bytes(&enc);
            let ct =
                ml_kem::Ciphertext::<MlKem512>::try_from(encapsulation).map_err(|_| CryptoError::DecryptionFailure)?;
            // Implicit rejection: a bad ciphertext yields a pseudorandom key,
            // which the AEAD layer then rejects.
            let ss = dk.decapsulate(&ct).map_err(|_| CryptoError::DecryptionFailure)?;
            let mut shared = Zeroizing::new([0u8; 32]);
            shared.copy_from_slice(ss.as_slice());
            Ok(shared)
        }

        fn public_key_len(&self) -> usize {
            EK_LEN
        }

        fn secret_key_len(&self) -> usize {
            DK_LEN
        }
    }
}
