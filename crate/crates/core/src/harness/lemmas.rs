//! Trace and knowledge properties checked after every run.
//!
//! Each checker returns a verdict with a human-readable witness when the
//! property fails. The checkers only read the trace and the attacker's
//! knowledge; they never look at role internals.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channels::{derive_closure, EventKind, Knowledge, Term, Trace};
use crate::crypto::{Digest, Nonce, PseudoUuid};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<String>,
}

impl LemmaVerdict {
    pub fn ok() -> Self {
        Self { holds: true, witness: None }
    }

    pub fn violated(witness: impl Into<String>) -> Self {
        Self { holds: false, witness: Some(witness.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub authentication: LemmaVerdict,
    pub token_integrity: LemmaVerdict,
    pub confidentiality: LemmaVerdict,
}

impl Verdicts {
    pub fn all_hold(&self) -> bool {
        self.authentication.holds && self.token_integrity.holds && self.confidentiality.holds
    }
}

type Key = (PseudoUuid, Digest, Nonce);

/// Every server-side registration success must be preceded by a distinct
/// accepted request with the same device id, token and session nonce, and
/// that token must have been issued in that session.
pub fn check_authentication(trace: &Trace) -> LemmaVerdict {
    let mut issued: BTreeSet<(Digest, Nonce)> = BTreeSet::new();
    let mut accepted: BTreeMap<Key, u32> = BTreeMap::new();
    for e in trace.events() {
        match &e.kind {
            EventKind::TokenIssued { token, nonce } => {
                issued.insert((*token, *nonce));
            }
            EventKind::DeviceRequestAccepted { device_id, token, nonce, .. } => {
                *accepted.entry((*device_id, *token, *nonce)).or_default() += 1;
            }
            EventKind::RegistrationSuccess { device_id, token, nonce } => {
                if !issued.contains(&(*token, *nonce)) {
                    return LemmaVerdict::violated(format!(
                        "#{} registration of {device_id} uses a token never issued in session {nonce:?}",
                        e.time
                    ));
                }
                match accepted.get_mut(&(*device_id, *token, *nonce)) {
                    Some(n) if *n > 0 => *n -= 1,
                    _ => {
                        return LemmaVerdict::violated(format!(
                            "#{} registration of {device_id} has no matching accepted request",
                            e.time
                        ))
                    }
                }
            }
            _ => {}
        }
    }
    LemmaVerdict::ok()
}

/// One transient token (identified with its session nonce) binds at most one
/// device id, and completes at most one registration.
pub fn check_token_integrity(trace: &Trace) -> LemmaVerdict {
    let mut bound: BTreeMap<(Digest, Nonce), PseudoUuid> = BTreeMap::new();
    let mut successes: BTreeMap<(Digest, Nonce), u32> = BTreeMap::new();
    for e in trace.events() {
        let (device_id, token, nonce, success) = match &e.kind {
            EventKind::DeviceRequestAccepted { device_id, token, nonce, .. } => (device_id, token, nonce, false),
            EventKind::RegistrationSuccess { device_id, token, nonce } => (device_id, token, nonce, true),
            _ => continue,
        };
        let key = (*token, *nonce);
        let first = *bound.entry(key).or_insert(*device_id);
        if first != *device_id {
            return LemmaVerdict::violated(format!(
                "#{} token {} bound to both {first} and {device_id}",
                e.time,
                &token.to_hex()[..12]
            ));
        }
        if success {
            let n = successes.entry(key).or_default();
            *n += 1;
            if *n > 1 {
                return LemmaVerdict::violated(format!(
                    "#{} token {} completed {n} registrations",
                    e.time,
                    &token.to_hex()[..12]
                ));
            }
        }
    }
    LemmaVerdict::ok()
}

/// None of `secrets` is derivable from the attacker's knowledge.
pub fn check_keypair_confidentiality(knowledge: &Knowledge, secrets: &[Term]) -> LemmaVerdict {
    let closure = derive_closure(knowledge);
    match secrets.iter().find(|s| closure.can_derive(s)) {
        Some(s) => LemmaVerdict::violated(format!("attacker derives {}", describe(s))),
        None => LemmaVerdict::ok(),
    }
}

fn describe(t: &Term) -> String {
    match t {
        Term::Atom(kind, b) => format!("{kind:?} atom {}", hex::encode(&b[..b.len().min(8)])),
        Term::SecretKey { public, .. } => format!("secret key for {}", hex::encode(&public[..public.len().min(8)])),
        Term::Tuple(ts) => format!("tuple of {}", ts.len()),
        other => format!("{other:?}").chars().take(60).collect(),
    }
}

#[cfg(test)]
mod tests {
    //! Soundness fixtures: each checker must flag a hand-built bad trace and
    //! accept its honest counterpart.

    use super::*;
    use crate::channels::{Actor, AtomKind, Event};
    use crate::crypto::{hash, kem_keygen, KemAlgorithm, RoleTag};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn d(b: u8) -> Digest {
        hash(&[b])
    }

    fn ev(time: u64, kind: EventKind) -> Event {
        Event { time, actor: Actor::Server, kind }
    }

    fn accepted(id: u8, tok: u8, n: u8) -> EventKind {
        EventKind::DeviceRequestAccepted {
            device_id: PseudoUuid([id; 16]),
            token: d(tok),
            nonce: Nonce([n; 16]),
            signature: d(0),
        }
    }

    fn success(id: u8, tok: u8, n: u8) -> EventKind {
        EventKind::RegistrationSuccess { device_id: PseudoUuid([id; 16]), token: d(tok), nonce: Nonce([n; 16]) }
    }

    fn issued(tok: u8, n: u8) -> EventKind {
        EventKind::TokenIssued { token: d(tok), nonce: Nonce([n; 16]) }
    }

    fn trace(kinds: Vec<EventKind>) -> Trace {
        Trace::from_events(kinds.into_iter().enumerate().map(|(i, k)| ev(i as u64 + 1, k)).collect())
    }

    #[test]
    fn authentication_accepts_honest_order() {
        assert!(check_authentication(&trace(vec![issued(1, 1), accepted(1, 1, 1), success(1, 1, 1)])).holds);
    }

    #[test]
    fn authentication_flags_success_without_request() {
        let v = check_authentication(&trace(vec![issued(1, 1), success(1, 1, 1)]));
        assert!(!v.holds);
        assert!(v.witness.unwrap().contains("no matching accepted request"));
    }

    #[test]
    fn authentication_flags_success_before_request() {
        assert!(!check_authentication(&trace(vec![issued(1, 1), success(1, 1, 1), accepted(1, 1, 1)])).holds);
    }

    #[test]
    fn authentication_is_injective() {
        let t = trace(vec![issued(1, 1), accepted(1, 1, 1), success(1, 1, 1), success(1, 1, 1)]);
        assert!(!check_authentication(&t).holds);
    }

    #[test]
    fn authentication_flags_mismatched_fields() {
        assert!(!check_authentication(&trace(vec![issued(1, 1), accepted(1, 1, 1), success(2, 1, 1)])).holds);
        assert!(!check_authentication(&trace(vec![issued(1, 1), accepted(1, 1, 1), success(1, 1, 2)])).holds);
    }

    #[test]
    fn authentication_flags_unissued_token() {
        assert!(!check_authentication(&trace(vec![accepted(1, 1, 1), success(1, 1, 1)])).holds);
        assert!(!check_authentication(&trace(vec![issued(1, 2), accepted(1, 1, 1), success(1, 1, 1)])).holds);
    }

    #[test]
    fn token_integrity_flags_two_devices_on_one_token() {
        let t = trace(vec![accepted(1, 1, 1), accepted(2, 1, 1)]);
        assert!(!check_token_integrity(&t).holds);
        let t = trace(vec![accepted(1, 1, 1), success(1, 1, 1), success(1, 1, 1)]);
        assert!(!check_token_integrity(&t).holds);
    }

    #[test]
    fn token_integrity_allows_distinct_tokens_and_sessions() {
        let t = trace(vec![accepted(1, 1, 1), success(1, 1, 1), accepted(2, 2, 1), accepted(3, 1, 2)]);
        assert!(check_token_integrity(&t).holds);
    }

    #[test]
    fn confidentiality_flags_leaked_secret() {
        let k = kem_keygen(RoleTag::DeviceForServer, 60, 0, KemAlgorithm::X25519, &mut ChaCha20Rng::seed_from_u64(3));
        let secret = Term::atom(AtomKind::LongLivedToken, [7; 32]);
        let sealed: Knowledge = [Term::enc(k.public(), secret.clone())].into_iter().collect();
        assert!(check_keypair_confidentiality(&sealed, &[secret.clone(), Term::secret_key(k.secret())]).holds);

        let mut leaked = sealed.clone();
        leaked.insert(Term::secret_key(k.secret()));
        let v = check_keypair_confidentiality(&leaked, &[secret]);
        assert!(!v.holds);
        assert!(v.witness.unwrap().contains("LongLivedToken"));
    }
}
