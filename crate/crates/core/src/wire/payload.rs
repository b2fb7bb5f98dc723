//! Plaintexts carried inside encrypted messages. Each has one canonical
//! encoding, produced before encryption and checked after decryption.

use crate::crypto::{HybridCiphertext, LongLivedToken, Nonce, PseudoUuid, PublicKey, Signature};

use super::{Decode, DecodeError, Encode, Reader, Writer};

pub const CONNECTED_STATUS: &str = "connected";
pub const REVOKE_COMMAND: &str = "revoke";

/// Challenge nonce plus the responder's signature over it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedNonce {
    pub nonce: Nonce,
    pub signature: Signature,
}

/// Transient token and the server API address the device should use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrant {
    pub token: String,
    pub api_address: String,
}

/// What the authenticator hands the device over the link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvisionBundle {
    pub api_address: String,
    /// The server's session key, to which the device encrypts its request.
    pub server_key: PublicKey,
    /// The transient token encrypted to `server_key`.
    pub encrypted_token: HybridCiphertext,
    /// Authenticator signature over the encoded `encrypted_token`.
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationBody {
    pub device_key: PublicKey,
    pub device_id: PseudoUuid,
    pub encrypted_token: HybridCiphertext,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationBody {
    pub long_lived_token: LongLivedToken,
    pub server_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectedBody {
    pub device_id: PseudoUuid,
    pub status: String,
}

/// One sensor sample. `manufacturer` names the device's OEM so the ledger
/// can scope manufacturer reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Reading {
    pub metric: String,
    pub value: f64,
    pub unit: String,
    pub manufacturer: String,
}

// Decoding rejects NaN, so equality is reflexive on every decodable value.
impl Eq for Reading {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBody {
    pub device_id: PseudoUuid,
    pub reading: Reading,
    pub long_lived_token: LongLivedToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevocationBody {
    pub command: String,
    pub device_id: PseudoUuid,
}

impl Encode for PseudoUuid {
    fn encode_into(&self, w: &mut Writer) {
        w.fixed(&self.0);
    }
}

impl Decode for PseudoUuid {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PseudoUuid(r.array()?))
    }
}

impl Encode for LongLivedToken {
    fn encode_into(&self, w: &mut Writer) {
        w.fixed(&self.0);
    }
}

impl Decode for LongLivedToken {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(LongLivedToken(r.array()?))
    }
}

impl Encode for SignedNonce {
    fn encode_into(&self, w: &mut Writer) {
        self.nonce.encode_into(w);
        self.signature.encode_into(w);
    }
}

impl Decode for SignedNonce {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { nonce: Nonce::decode_from(r)?, signature: Signature::decode_from(r)? })
    }
}

impl Encode for TokenGrant {
    fn encode_into(&self, w: &mut Writer) {
        w.str(&self.token).str(&self.api_address);
    }
}

impl Decode for TokenGrant {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { token: r.str()?.to_owned(), api_address: r.str()?.to_owned() })
    }
}

impl Encode for ProvisionBundle {
    fn encode_into(&self, w: &mut Writer) {
        w.str(&self.api_address);
        self.server_key.encode_into(w);
        self.encrypted_token.encode_into(w);
        self.signature.encode_into(w);
    }
}

impl Decode for ProvisionBundle {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            api_address: r.str()?.to_owned(),
            server_key: PublicKey::decode_from(r)?,
            encrypted_token: HybridCiphertext::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

impl Encode for RegistrationBody {
    fn encode_into(&self, w: &mut Writer) {
        self.device_key.encode_into(w);
        self.device_id.encode_into(w);
        self.encrypted_token.encode_into(w);
        self.signature.encode_into(w);
    }
}

impl Decode for RegistrationBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            device_key: PublicKey::decode_from(r)?,
            device_id: PseudoUuid::decode_from(r)?,
            encrypted_token: HybridCiphertext::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

impl Encode for ActivationBody {
    fn encode_into(&self, w: &mut Writer) {
        self.long_lived_token.encode_into(w);
        self.server_key.encode_into(w);
    }
}

impl Decode for ActivationBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { long_lived_token: LongLivedToken::decode_from(r)?, server_key: PublicKey::decode_from(r)? })
    }
}

impl Encode for ConnectedBody {
    fn encode_into(&self, w: &mut Writer) {
        self.device_id.encode_into(w);
        w.str(&self.status);
    }
}

impl Decode for ConnectedBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { device_id: PseudoUuid::decode_from(r)?, status: r.str()?.to_owned() })
    }
}

impl Encode for Reading {
    fn encode_into(&self, w: &mut Writer) {
        w.str(&self.metric).f64(self.value).str(&self.unit).str(&self.manufacturer);
    }
}

impl Decode for Reading {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            metric: r.str()?.to_owned(),
            value: r.f64()?,
            unit: r.str()?.to_owned(),
            manufacturer: r.str()?.to_owned(),
        })
    }
}

impl Encode for ReportBody {
    fn encode_into(&self, w: &mut Writer) {
        self.device_id.encode_into(w);
        self.reading.encode_into(w);
        self.long_lived_token.encode_into(w);
    }
}

impl Decode for ReportBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            device_id: PseudoUuid::decode_from(r)?,
            reading: Reading::decode_from(r)?,
            long_lived_token: LongLivedToken::decode_from(r)?,
        })
    }
}

impl Encode for RevocationBody {
    fn encode_into(&self, w: &mut Writer) {
        w.str(&self.command);
        self.device_id.encode_into(w);
    }
}

impl Decode for RevocationBody {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self { command: r.str()?.to_owned(), device_id: PseudoUuid::decode_from(r)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::fixtures;

    fn round_trip<T: Encode + Decode + PartialEq + std::fmt::Debug>(v: &T) {
        let b = v.to_bytes();
        assert_eq!(&T::from_bytes(&b).unwrap(), v);
        let mut longer = b.clone();
        longer.push(1);
        assert_eq!(T::from_bytes(&longer), Err(DecodeError::TrailingBytes(1)));
        for cut in 0..b.len() {
            assert!(T::from_bytes(&b[..cut]).is_err());
        }
    }

    #[test]
    fn all_payloads_round_trip() {
        let p = fixtures::payloads();
        round_trip(&p.signed_nonce);
        round_trip(&p.token_grant);
        round_trip(&p.provision);
        round_trip(&p.registration);
        round_trip(&p.activation);
        round_trip(&p.connected);
        round_trip(&p.report);
        round_trip(&p.revocation);
    }

    #[test]
    fn nan_readings_do_not_decode() {
        let mut r = fixtures::payloads().report;
        r.reading.value = f64::NAN;
        assert_eq!(ReportBody::from_bytes(&r.to_bytes()), Err(DecodeError::InvalidField("NaN is not encodable")));
    }

    #[test]
    fn invalid_utf8_is_rejected() {
        let mut w = Writer::new();
        w.bytes(&[0xff, 0xfe]).str("x");
        assert!(TokenGrant::from_bytes(&w.finish()).is_err());
    }
}
