//! Ordered protocol event log.
//!
//! Time here is logical: a counter that increases by one per recorded event.
//! Lemma checks compare these times, never wall-clock values.

use std::fmt;

use crate::crypto::{hash, Digest, Nonce, PseudoUuid};
use crate::wire::Writer;

/// Who recorded an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Actor {
    Server,
    Authenticator(u32),
    Device(u32),
    Adversary,
    Ledger,
}

impl Actor {
    fn encode(&self, w: &mut Writer) {
        match self {
            Actor::Server => w.u8(1),
            Actor::Authenticator(i) => w.u8(2).u32(*i),
            Actor::Device(i) => w.u8(3).u32(*i),
            Actor::Adversary => w.u8(4),
            Actor::Ledger => w.u8(5),
        };
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Server => f.write_str("server"),
            Actor::Authenticator(i) => write!(f, "authenticator-{i}"),
            Actor::Device(i) => write!(f, "device-{i}"),
            Actor::Adversary => f.write_str("adversary"),
            Actor::Ledger => f.write_str("ledger"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    SessionEstablished {
        authenticator: u32,
    },
    /// `token` is the SHA-256 of the token digits; `nonce` is the server
    /// challenge of the session the token belongs to.
    TokenIssued {
        token: Digest,
        nonce: Nonce,
    },
    DeviceProvisioned,
    DeviceRequestSent {
        device_id: PseudoUuid,
    },
    /// Validation of a registration request passed. `signature` is the digest
    /// of the authenticator signature the request carried.
    DeviceRequestAccepted {
        device_id: PseudoUuid,
        token: Digest,
        nonce: Nonce,
        signature: Digest,
    },
    RequestRejected {
        reason: String,
    },
    RegistrationSuccess {
        device_id: PseudoUuid,
        token: Digest,
        nonce: Nonce,
    },
    /// Digests of the activation material generated for a device: the
    /// long-lived token, the device's public key, and the per-device server
    /// public key.
    KeypairDelivered {
        device_id: PseudoUuid,
        long_lived_token: Digest,
        device_key: Digest,
        server_key: Digest,
    },
    DeviceActivated {
        device_id: PseudoUuid,
    },
    DeviceConnected {
        device_id: PseudoUuid,
    },
    DataStored {
        device_id: PseudoUuid,
    },
    DataRejected {
        reason: String,
    },
    RiskAlert {
        device_id: PseudoUuid,
        metric: String,
    },
    Revoked {
        device_id: PseudoUuid,
    },
    LedgerCommit {
        channel: String,
        height: u64,
    },
    AdversaryAction {
        index: Option<u64>,
        action: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionEstablished { .. } => "SessionEstablished",
            EventKind::TokenIssued { .. } => "TokenIssued",
            EventKind::DeviceProvisioned => "DeviceProvisioned",
            EventKind::DeviceRequestSent { .. } => "DeviceRequestSent",
            EventKind::DeviceRequestAccepted { .. } => "DeviceRequestAccepted",
            EventKind::RequestRejected { .. } => "RequestRejected",
            EventKind::RegistrationSuccess { .. } => "RegistrationSuccess",
            EventKind::KeypairDelivered { .. } => "KeypairDelivered",
            EventKind::DeviceActivated { .. } => "DeviceActivated",
            EventKind::DeviceConnected { .. } => "DeviceConnected",
            EventKind::DataStored { .. } => "DataStored",
            EventKind::DataRejected { .. } => "DataRejected",
            EventKind::RiskAlert { .. } => "RiskAlert",
            EventKind::Revoked { .. } => "Revoked",
            EventKind::LedgerCommit { .. } => "LedgerCommit",
            EventKind::AdversaryAction { .. } => "AdversaryAction",
        }
    }

    fn encode(&self, w: &mut Writer) {
        w.str(self.name());
        match self {
            EventKind::SessionEstablished { authenticator } => {
                w.u32(*authenticator);
            }
            EventKind::TokenIssued { token, nonce } => {
                w.fixed(&token.0).fixed(&nonce.0);
            }
            EventKind::DeviceProvisioned => {}
            EventKind::DeviceRequestSent { device_id }
            | EventKind::DeviceActivated { device_id }
            | EventKind::DeviceConnected { device_id }
            | EventKind::DataStored { device_id }
            | EventKind::Revoked { device_id } => {
                w.fixed(&device_id.0);
            }
            EventKind::DeviceRequestAccepted { device_id, token, nonce, signature } => {
                w.fixed(&device_id.0).fixed(&token.0).fixed(&nonce.0).fixed(&signature.0);
            }
            EventKind::RequestRejected { reason } | EventKind::DataRejected { reason } => {
                w.str(reason);
            }
            EventKind::RegistrationSuccess { device_id, token, nonce } => {
                w.fixed(&device_id.0).fixed(&token.0).fixed(&nonce.0);
            }
            EventKind::KeypairDelivered { device_id, long_lived_token, device_key, server_key } => {
                w.fixed(&device_id.0).fixed(&long_lived_token.0).fixed(&device_key.0).fixed(&server_key.0);
            }
            EventKind::RiskAlert { device_id, metric } => {
                w.fixed(&device_id.0).str(metric);
            }
            EventKind::LedgerCommit { channel, height } => {
                w.str(channel).u64(*height);
            }
            EventKind::AdversaryAction { index, action } => {
                match index {
                    Some(i) => w.u8(1).u64(*i),
                    None => w.u8(0),
                };
                w.str(action);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub time: u64,
    pub actor: Actor,
    pub kind: EventKind,
}

impl Event {
    pub fn payload_digest(&self) -> Digest {
        let mut w = Writer::new();
        self.kind.encode(&mut w);
        hash(&w.finish())
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} {}", self.time, self.actor, self.kind.name())
    }
}

/// Append-only event log with strictly increasing logical times.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<Event>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an event at the next logical time and returns that time.
    pub fn record(&mut self, actor: Actor, kind: EventKind) -> u64 {
        let time = self.events.last().map_or(1, |e| e.time + 1);
        self.events.push(Event { time, actor, kind });
        time
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last(&self) -> Option<&Event> {
        self.events.last()
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }

    /// Builds a trace from arbitrary events, for checker self-tests. Panics if
    /// the times are not strictly increasing.
    pub fn from_events(events: Vec<Event>) -> Self {
        assert!(events.windows(2).all(|w| w[0].time < w[1].time), "logical times must increase");
        Self { events }
    }

    /// Canonical encoding: for each event, time, actor, and encoded kind.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.events.len() as u64);
        for e in &self.events {
            w.u64(e.time);
            e.actor.encode(&mut w);
            e.kind.encode(&mut w);
        }
        w.finish()
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn times_increase_from_one() {
        let mut t = Trace::new();
        assert_eq!(t.record(Actor::Server, EventKind::DeviceProvisioned), 1);
        assert_eq!(t.record(Actor::Device(0), EventKind::DeviceProvisioned), 2);
        assert!(t.events().windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn digest_covers_payloads() {
        let mut a = Trace::new();
        a.record(Actor::Server, EventKind::RequestRejected { reason: "x".into() });
        let mut b = Trace::new();
        b.record(Actor::Server, EventKind::RequestRejected { reason: "y".into() });
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }

    #[test]
    #[should_panic(expected = "logical times must increase")]
    fn from_events_checks_order() {
        let e = Event { time: 2, actor: Actor::Server, kind: EventKind::DeviceProvisioned };
        Trace::from_events(vec![e.clone(), e]);
    }
}
