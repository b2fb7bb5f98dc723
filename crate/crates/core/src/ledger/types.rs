use std::fmt;
use std::str::FromStr;

use rand_core::CryptoRngCore;
use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest, LongLivedToken, PseudoUuid, PublicKey, SigningKey, VerifyingKey};
use crate::risk::{Comparator, Severity};
use crate::wire::{signing_input, Decode, DecodeError, Encode, Reader, Writer};

const LABEL_TX: &[u8] = b"onboard/ledger/tx/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelId {
    Identity,
    Data,
    RiskManagement,
}

impl ChannelId {
    pub const ALL: [ChannelId; 3] = [ChannelId::Identity, ChannelId::Data, ChannelId::RiskManagement];

    pub fn code(self) -> u8 {
        match self {
            ChannelId::Identity => 1,
            ChannelId::Data => 2,
            ChannelId::RiskManagement => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => ChannelId::Identity,
            2 => ChannelId::Data,
            3 => ChannelId::RiskManagement,
            _ => return None,
        })
    }

    pub fn index(self) -> usize {
        self.code() as usize - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelId::Identity => "identity",
            ChannelId::Data => "data",
            ChannelId::RiskManagement => "risk-management",
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "identity" => Ok(ChannelId::Identity),
            "data" => Ok(ChannelId::Data),
            "risk-management" | "risk" => Ok(ChannelId::RiskManagement),
            _ => Err(format!("unknown channel `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OrgRole {
    Server,
    Manufacturer,
    Insurer,
    EmergencyService,
    RiskEngine,
}

impl OrgRole {
    pub const ALL: [OrgRole; 5] =
        [OrgRole::Server, OrgRole::Manufacturer, OrgRole::Insurer, OrgRole::EmergencyService, OrgRole::RiskEngine];

    pub fn code(self) -> u8 {
        match self {
            OrgRole::Server => 1,
            OrgRole::Manufacturer => 2,
            OrgRole::Insurer => 3,
            OrgRole::EmergencyService => 4,
            OrgRole::RiskEngine => 5,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            OrgRole::Server => "server",
            OrgRole::Manufacturer => "manufacturer",
            OrgRole::Insurer => "insurer",
            OrgRole::EmergencyService => "emergency-service",
            OrgRole::RiskEngine => "risk-engine",
        }
    }
}

impl fmt::Display for OrgRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrgRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|r| r.name() == norm || r.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown organization role `{s}`"))
    }
}

impl TryFrom<String> for OrgRole {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<OrgRole> for String {
    fn from(r: OrgRole) -> Self {
        r.name().to_owned()
    }
}

/// A consortium member as registered with the membership service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgIdentity {
    pub org_id: String,
    pub role: OrgRole,
    pub credential: VerifyingKey,
}

impl Encode for OrgIdentity {
    fn encode_into(&self, w: &mut Writer) {
        w.str(&self.org_id).u8(self.role.code()).fixed(self.credential.as_bytes());
    }
}

impl Decode for OrgIdentity {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let org_id = r.str()?.to_owned();
        let role = OrgRole::from_code(r.u8()?).ok_or(DecodeError::InvalidField("org role"))?;
        let credential = VerifyingKey::from_bytes(r.array()?).map_err(|_| DecodeError::InvalidField("credential"))?;
        Ok(Self { org_id, role, credential })
    }
}

/// An identity together with its signing key; what a submitter holds.
#[derive(Debug, Clone)]
pub struct Member {
    identity: OrgIdentity,
    key: SigningKey,
}

impl Member {
    pub fn generate(org_id: impl Into<String>, role: OrgRole, rng: &mut impl CryptoRngCore) -> Self {
        let key = SigningKey::generate(rng);
        Self { identity: OrgIdentity { org_id: org_id.into(), role, credential: key.verifying_key() }, key }
    }

    pub fn identity(&self) -> &OrgIdentity {
        &self.identity
    }

    /// Builds and signs a transaction.
    pub fn transaction(&self, channel: ChannelId, payload: Payload, timestamp: u64) -> LedgerTransaction {
        let mut tx =
            LedgerTransaction { channel, payload, submitter: self.identity.clone(), timestamp, signature: [0; 64] };
        tx.signature = self.key.sign_raw(&tx.signing_bytes());
        tx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceStatus {
    Active,
    Deactivated,
}

/// Registration record on the Identity channel. A status change is a new
/// record; earlier ones stay in history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRecord {
    pub long_lived_token: LongLivedToken,
    /// Per-device server key.
    pub server_key: PublicKey,
    pub device_key: PublicKey,
    /// Session key of the authenticator that onboarded the device; acts as
    /// proof of ownership.
    pub authenticator_key: PublicKey,
    pub device_id: PseudoUuid,
    pub status: DeviceStatus,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataEntry {
    pub device_id: PseudoUuid,
    pub metric: String,
    pub value: f64,
    pub unit: String,
    pub manufacturer: String,
    pub device_key: PublicKey,
    pub timestamp: u64,
}

impl Eq for DataEntry {}

/// Location of a committed transaction plus the digest of its bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntryRef {
    pub height: u64,
    pub index: u32,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskAlert {
    pub device_id: PseudoUuid,
    pub metric: String,
    pub observed: f64,
    pub comparator: Comparator,
    pub threshold: f64,
    pub unit: String,
    pub severity: Severity,
    pub targets: Vec<OrgRole>,
    /// The Data-channel entry that triggered the alert.
    pub source: EntryRef,
}

impl Eq for RiskAlert {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Device(DeviceRecord),
    Data(DataEntry),
    Alert(RiskAlert),
}

impl Payload {
    pub fn channel(&self) -> ChannelId {
        match self {
            Payload::Device(_) => ChannelId::Identity,
            Payload::Data(_) => ChannelId::Data,
            Payload::Alert(_) => ChannelId::RiskManagement,
        }
    }

    pub fn device_id(&self) -> PseudoUuid {
        match self {
            Payload::Device(r) => r.device_id,
            Payload::Data(e) => e.device_id,
            Payload::Alert(a) => a.device_id,
        }
    }
}

impl Encode for Payload {
    fn encode_into(&self, w: &mut Writer) {
        match self {
            Payload::Device(r) => {
                w.u8(1);
                r.long_lived_token.encode_into(w);
                r.server_key.encode_into(w);
                r.device_key.encode_into(w);
                r.authenticator_key.encode_into(w);
                r.device_id.encode_into(w);
                w.u8(match r.status {
                    DeviceStatus::Active => 1,
                    DeviceStatus::Deactivated => 2,
                });
                w.u64(r.timestamp);
            }
            Payload::Data(e) => {
                w.u8(2);
                e.device_id.encode_into(w);
                w.str(&e.metric).f64(e.value).str(&e.unit).str(&e.manufacturer);
                e.device_key.encode_into(w);
                w.u64(e.timestamp);
            }
            Payload::Alert(a) => {
                w.u8(3);
                a.device_id.encode_into(w);
                w.str(&a.metric).f64(a.observed).u8(a.comparator.code()).f64(a.threshold).str(&a.unit);
                w.u8(a.severity.code());
                w.u32(a.targets.len() as u32);
                for t in &a.targets {
                    w.u8(t.code());
                }
                w.u64(a.source.height).u32(a.source.index).fixed(&a.source.digest.0);
            }
        }
    }
}

impl Decode for Payload {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.u8()? {
            1 => Payload::Device(DeviceRecord {
                long_lived_token: LongLivedToken::decode_from(r)?,
                server_key: PublicKey::decode_from(r)?,
                device_key: PublicKey::decode_from(r)?,
                authenticator_key: PublicKey::decode_from(r)?,
                device_id: PseudoUuid::decode_from(r)?,
                status: match r.u8()? {
                    1 => DeviceStatus::Active,
                    2 => DeviceStatus::Deactivated,
                    _ => return Err(DecodeError::InvalidField("device status")),
                },
                timestamp: r.u64()?,
            }),
            2 => Payload::Data(DataEntry {
                device_id: PseudoUuid::decode_from(r)?,
                metric: r.str()?.to_owned(),
                value: r.f64()?,
                unit: r.str()?.to_owned(),
                manufacturer: r.str()?.to_owned(),
                device_key: PublicKey::decode_from(r)?,
                timestamp: r.u64()?,
            }),
            3 => {
                let device_id = PseudoUuid::decode_from(r)?;
                let metric = r.str()?.to_owned();
                let observed = r.f64()?;
                let comparator = Comparator::from_code(r.u8()?).ok_or(DecodeError::InvalidField("comparator"))?;
                let threshold = r.f64()?;
                let unit = r.str()?.to_owned();
                let severity = Severity::from_code(r.u8()?).ok_or(DecodeError::InvalidField("severity"))?;
                let n = r.u32()? as usize;
                if n > r.remaining() {
                    return Err(DecodeError::Truncated);
                }
                let targets = (0..n)
                    .map(|_| OrgRole::from_code(r.u8()?).ok_or(DecodeError::InvalidField("target role")))
                    .collect::<Result<Vec<_>, _>>()?;
                let source = EntryRef { height: r.u64()?, index: r.u32()?, digest: Digest(r.array()?) };
                Payload::Alert(RiskAlert {
                    device_id,
                    metric,
                    observed,
                    comparator,
                    threshold,
                    unit,
                    severity,
                    targets,
                    source,
                })
            }
            _ => return Err(DecodeError::InvalidField("payload type")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerTransaction {
    pub channel: ChannelId,
    pub payload: Payload,
    pub submitter: OrgIdentity,
    pub timestamp: u64,
    pub signature: [u8; 64],
}

impl LedgerTransaction {
    /// Bytes covered by the submitter signature: everything but the
    /// signature, behind a context label.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_unsigned(&mut w);
        signing_input(LABEL_TX, &w.finish())
    }

    fn encode_unsigned(&self, w: &mut Writer) {
        w.u8(self.channel.code());
        self.payload.encode_into(w);
        self.submitter.encode_into(w);
        w.u64(self.timestamp);
    }

    pub fn signature_valid(&self) -> bool {
        self.submitter.credential.verify_raw(&self.signing_bytes(), &self.signature)
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

impl Encode for LedgerTransaction {
    fn encode_into(&self, w: &mut Writer) {
        self.encode_unsigned(w);
        w.fixed(&self.signature);
    }
}

impl Decode for LedgerTransaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let channel = ChannelId::from_code(r.u8()?).ok_or(DecodeError::InvalidField("channel"))?;
        Ok(Self {
            channel,
            payload: Payload::decode_from(r)?,
            submitter: OrgIdentity::decode_from(r)?,
            timestamp: r.u64()?,
            signature: r.array()?,
        })
    }
}
