//! Canonical binary encoding of protocol messages.
//!
//! A frame is `tag (u8) | body length (u32 BE) | body`. Inside a body, fields
//! appear in declaration order; variable-length fields carry a `u32` BE
//! length prefix and fixed-size fields (nonces, tags, identifiers) are raw.
//! There is exactly one encoding per value, so signatures can be computed
//! over encoded bytes and compared byte-for-byte.
//!
//! See `docs/wire-format.md` for annotated dumps of every variant.

mod codec;
pub mod fixtures;
mod payload;

use thiserror::Error;

use crate::crypto::{HybridCiphertext, LinkCiphertext, Nonce, PublicKey, RoleTag, Signature};

pub use codec::{Reader, Writer};
pub use payload::{
    ActivationBody, ConnectedBody, ProvisionBundle, Reading, RegistrationBody, ReportBody, RevocationBody, SignedNonce,
    TokenGrant, CONNECTED_STATUS, REVOKE_COMMAND,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("input truncated")]
    Truncated,
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
}

/// Types with a canonical byte encoding.
pub trait Encode {
    fn encode_into(&self, w: &mut Writer);

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete value; leftover input is an error.
    fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

/// Every message exchanged between roles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Ephemeral public key announcement at login (both directions).
    SessionHello { public_key: PublicKey },
    /// Fresh challenge (both directions).
    NonceChallenge { nonce: Nonce },
    /// [`SignedNonce`] encrypted to the challenger.
    NonceResponse { ciphertext: HybridCiphertext },
    /// [`TokenGrant`] encrypted to the authenticator.
    TokenDelivery { ciphertext: HybridCiphertext },
    /// [`ProvisionBundle`] sealed under the authenticator/device link key.
    DeviceProvision { ciphertext: LinkCiphertext },
    /// [`RegistrationBody`] encrypted to the server's session key.
    RegistrationRequest { ciphertext: HybridCiphertext },
    /// [`ActivationBody`] encrypted to the device key.
    ActivationResponse { ciphertext: HybridCiphertext },
    /// [`ConnectedBody`] encrypted to the authenticator.
    ConnectedNotice { ciphertext: HybridCiphertext },
    /// [`ReportBody`] encrypted to the per-device server key.
    DataReport { ciphertext: HybridCiphertext },
    /// [`RevocationBody`] encrypted to the server's session key.
    RevocationRequest { ciphertext: HybridCiphertext },
}

impl Message {
    pub const TAG_SESSION_HELLO: u8 = 0x01;
    pub const TAG_NONCE_CHALLENGE: u8 = 0x02;
    pub const TAG_NONCE_RESPONSE: u8 = 0x03;
    pub const TAG_TOKEN_DELIVERY: u8 = 0x04;
    pub const TAG_DEVICE_PROVISION: u8 = 0x05;
    pub const TAG_REGISTRATION_REQUEST: u8 = 0x06;
    pub const TAG_ACTIVATION_RESPONSE: u8 = 0x07;
    pub const TAG_CONNECTED_NOTICE: u8 = 0x08;
    pub const TAG_DATA_REPORT: u8 = 0x09;
    pub const TAG_REVOCATION_REQUEST: u8 = 0x0a;

    pub fn tag(&self) -> u8 {
        match self {
            Message::SessionHello { .. } => Self::TAG_SESSION_HELLO,
            Message::NonceChallenge { .. } => Self::TAG_NONCE_CHALLENGE,
            Message::NonceResponse { .. } => Self::TAG_NONCE_RESPONSE,
            Message::TokenDelivery { .. } => Self::TAG_TOKEN_DELIVERY,
            Message::DeviceProvision { .. } => Self::TAG_DEVICE_PROVISION,
            Message::RegistrationRequest { .. } => Self::TAG_REGISTRATION_REQUEST,
            Message::ActivationResponse { .. } => Self::TAG_ACTIVATION_RESPONSE,
            Message::ConnectedNotice { .. } => Self::TAG_CONNECTED_NOTICE,
            Message::DataReport { .. } => Self::TAG_DATA_REPORT,
            Message::RevocationRequest { .. } => Self::TAG_REVOCATION_REQUEST,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::SessionHello { .. } => "SessionHello",
            Message::NonceChallenge { .. } => "NonceChallenge",
            Message::NonceResponse { .. } => "NonceResponse",
            Message::TokenDelivery { .. } => "TokenDelivery",
            Message::DeviceProvision { .. } => "DeviceProvision",
            Message::RegistrationRequest { .. } => "RegistrationRequest",
            Message::ActivationResponse { .. } => "ActivationResponse",
            Message::ConnectedNotice { .. } => "ConnectedNotice",
            Message::DataReport { .. } => "DataReport",
            Message::RevocationRequest { .. } => "RevocationRequest",
        }
    }

    /// The public-key ciphertext carried by the message, if any.
    pub fn hybrid_ciphertext(&self) -> Option<&HybridCiphertext> {
        match self {
            Message::NonceResponse { ciphertext }
            | Message::TokenDelivery { ciphertext }
            | Message::RegistrationRequest { ciphertext }
            | Message::ActivationResponse { ciphertext }
            | Message::ConnectedNotice { ciphertext }
            | Message::DataReport { ciphertext }
            | Message::RevocationRequest { ciphertext } => Some(ciphertext),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_bytes()
    }

    /// Total over arbitrary input: returns a message or a structured error.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_bytes(bytes)
    }
}

impl Encode for Message {
    fn encode_into(&self, w: &mut Writer) {
        let mut body = Writer::new();
        match self {
            Message::SessionHello { public_key } => public_key.encode_into(&mut body),
            Message::NonceChallenge { nonce } => nonce.encode_into(&mut body),
            Message::DeviceProvision { ciphertext } => ciphertext.encode_into(&mut body),
            Message::NonceResponse { ciphertext }
            | Message::TokenDelivery { ciphertext }
            | Message::RegistrationRequest { ciphertext }
            | Message::ActivationResponse { ciphertext }
            | Message::ConnectedNotice { ciphertext }
            | Message::DataReport { ciphertext }
            | Message::RevocationRequest { ciphertext } => ciphertext.encode_into(&mut body),
        }
        w.u8(self.tag()).bytes(&body.finish());
    }
}

impl Decode for Message {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let tag = r.u8()?;
        if !(Self::TAG_SESSION_HELLO..=Self::TAG_REVOCATION_REQUEST).contains(&tag) {
            return Err(DecodeError::UnknownTag(tag));
        }
        let body = r.bytes()?;
        let mut b = Reader::new(body);
        let msg = match tag {
            Self::TAG_SESSION_HELLO => Message::SessionHello { public_key: PublicKey::decode_from(&mut b)? },
            Self::TAG_NONCE_CHALLENGE => Message::NonceChallenge { nonce: Nonce::decode_from(&mut b)? },
            Self::TAG_DEVICE_PROVISION => Message::DeviceProvision { ciphertext: LinkCiphertext::decode_from(&mut b)? },
            _ => {
                let ciphertext = HybridCiphertext::decode_from(&mut b)?;
                match tag {
                    Self::TAG_NONCE_RESPONSE => Message::NonceResponse { ciphertext },
                    Self::TAG_TOKEN_DELIVERY => Message::TokenDelivery { ciphertext },
                    Self::TAG_REGISTRATION_REQUEST => Message::RegistrationRequest { ciphertext },
                    Self::TAG_ACTIVATION_RESPONSE => Message::ActivationResponse { ciphertext },
                    Self::TAG_CONNECTED_NOTICE => Message::ConnectedNotice { ciphertext },
                    Self::TAG_DATA_REPORT => Message::DataReport { ciphertext },
                    _ => Message::RevocationRequest { ciphertext },
                }
            }
        };
        b.finish()?;
        Ok(msg)
    }
}

// Encodings for crypto types that travel on the wire.

impl Encode for PublicKey {
    fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.to_bytes());
    }
}

impl Decode for PublicKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        PublicKey::from_bytes(r.bytes()?).map_err(|_| DecodeError::InvalidField("public key"))
    }
}

impl Encode for Nonce {
    fn encode_into(&self, w: &mut Writer) {
        w.fixed(&self.0);
    }
}

impl Decode for Nonce {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Nonce(r.array()?))
    }
}

impl Encode for Signature {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(self.signer.code()).fixed(&self.bytes);
    }
}

impl Decode for Signature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let signer = RoleTag::from_code(r.u8()?).ok_or(DecodeError::InvalidField("signer tag"))?;
        Ok(Signature { signer, bytes: r.array()? })
    }
}

impl Encode for HybridCiphertext {
    fn encode_into(&self, w: &mut Writer) {
        w.bytes(&self.encapsulation).fixed(&self.aead_nonce).bytes(&self.body).fixed(&self.auth_tag);
    }
}

impl Decode for HybridCiphertext {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(HybridCiphertext {
            encapsulation: r.bytes()?.to_vec(),
            aead_nonce: r.array()?,
            body: r.bytes()?.to_vec(),
            auth_tag: r.array()?,
        })
    }
}

impl Encode for LinkCiphertext {
    fn encode_into(&self, w: &mut Writer) {
        w.fixed(&self.aead_nonce).bytes(&self.body).fixed(&self.auth_tag);
    }
}

impl Decode for LinkCiphertext {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(LinkCiphertext { aead_nonce: r.array()?, body: r.bytes()?.to_vec(), auth_tag: r.array()? })
    }
}

/// Signing input with a fixed context label in front, so a signature made
/// for one purpose never verifies for another.
pub fn signing_input(label: &[u8], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(label.len() + 1 + data.len());
    out.extend_from_slice(label);
    out.push(0);
    out.extend_from_slice(data);
    out
}

pub const LABEL_NONCE: &[u8] = b"onboard/sig/nonce/v1";
pub const LABEL_TOKEN: &[u8] = b"onboard/sig/token/v1";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input_is_truncated() {
        assert_eq!(Message::decode(&[]), Err(DecodeError::Truncated));
    }

    #[test]
    fn appended_byte_is_trailing() {
        for m in fixtures::messages() {
            let mut b = m.encode();
            b.push(0);
            assert_eq!(Message::decode(&b), Err(DecodeError::TrailingBytes(1)), "{}", m.kind());
        }
    }

    #[test]
    fn unknown_tags_are_reported() {
        assert_eq!(Message::decode(&[0x00]), Err(DecodeError::UnknownTag(0)));
        assert_eq!(Message::decode(&[0x0b, 0, 0, 0, 0]), Err(DecodeError::UnknownTag(0x0b)));
    }

    #[test]
    fn every_fixture_round_trips() {
        let all = fixtures::messages();
        assert_eq!(all.len(), 10);
        for m in all {
            let b = m.encode();
            assert_eq!(Message::decode(&b).unwrap(), m);
            assert_eq!(Message::decode(&b).unwrap().encode(), b);
        }
    }

    #[test]
    fn equal_messages_encode_identically() {
        let a = fixtures::messages();
        let b = fixtures::messages();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y);
            assert_eq!(x.encode(), y.encode());
        }
    }

    #[test]
    fn inner_body_trailing_bytes_are_rejected() {
        // NonceChallenge with a 17-byte body.
        let mut b = vec![Message::TAG_NONCE_CHALLENGE, 0, 0, 0, 17];
        b.extend_from_slice(&[7; 17]);
        assert_eq!(Message::decode(&b), Err(DecodeError::TrailingBytes(1)));
    }

    #[test]
    fn every_truncation_is_an_error() {
        for m in fixtures::messages() {
            let b = m.encode();
            for cut in 0..b.len() {
                assert!(Message::decode(&b[..cut]).is_err(), "{} cut at {cut}", m.kind());
            }
        }
    }

    #[test]
    fn signing_input_separates_labels() {
        assert_ne!(signing_input(LABEL_NONCE, b"x"), signing_input(LABEL_TOKEN, b"x"));
        assert!(signing_input(LABEL_NONCE, b"x").starts_with(LABEL_NONCE));
    }

    fn arb_ct() -> impl Strategy<Value = HybridCiphertext> {
        (
            proptest::collection::vec(any::<u8>(), 0..64),
            any::<[u8; 12]>(),
            proptest::collection::vec(any::<u8>(), 0..128),
            any::<[u8; 16]>(),
        )
            .prop_map(|(encapsulation, aead_nonce, body, auth_tag)| HybridCiphertext {
                encapsulation,
                aead_nonce,
                body,
                auth_tag,
            })
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let keys = fixtures::public_keys();
        prop_oneof![
            (0..keys.len()).prop_map(move |i| Message::SessionHello { public_key: keys[i].clone() }),
            any::<[u8; 16]>().prop_map(|n| Message::NonceChallenge { nonce: Nonce(n) }),
            (any::<[u8; 12]>(), proptest::collection::vec(any::<u8>(), 0..128), any::<[u8; 16]>()).prop_map(
                |(aead_nonce, body, auth_tag)| Message::DeviceProvision {
                    ciphertext: LinkCiphertext { aead_nonce, body, auth_tag }
                }
            ),
            (4u8..=10, arb_ct()).prop_map(|(tag, ciphertext)| match tag {
                4 => Message::TokenDelivery { ciphertext },
                5 => Message::NonceResponse { ciphertext },
                6 => Message::RegistrationRequest { ciphertext },
                7 => Message::ActivationResponse { ciphertext },
                8 => Message::ConnectedNotice { ciphertext },
                9 => Message::DataReport { ciphertext },
                _ => Message::RevocationRequest { ciphertext },
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn decode_inverts_encode(m in arb_message()) {
            let b = m.encode();
            prop_assert_eq!(Message::decode(&b).unwrap(), m);
        }

        #[test]
        fn decode_never_panics(b in proptest::collection::vec(any::<u8>(), 0..256)) {
            if let Ok(m) = Message::decode(&b) {
                prop_assert_eq!(m.encode(), b);
            }
        }
    }
}
