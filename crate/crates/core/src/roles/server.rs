use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::channels::{Actor, AtomKind, EventKind, Term};
use crate::crypto::{
    gen_long_lived_token, gen_nonce, hash, hybrid_decrypt, hybrid_encrypt, kem_keygen, sign, totp_generate,
    totp_verify, verify, HybridCiphertext, KeyPair, LongLivedToken, Nonce, PseudoUuid, PublicKey, RoleTag, TotpSecret,
};
use crate::ledger::{ChannelId, DataEntry, DeviceRecord, DeviceStatus, Ledger, Member, Payload, Receipt};
use crate::wire::{
    signing_input, ActivationBody, ConnectedBody, Decode, Encode, Message, RegistrationBody, ReportBody,
    RevocationBody, SignedNonce, TokenGrant, CONNECTED_STATUS, LABEL_NONCE, LABEL_TOKEN, REVOKE_COMMAND,
};

use super::{out_of_phase, token_digest, Env, Outbound, ProtocolConfig, ProtocolError};

#[derive(Debug)]
struct PendingToken {
    secret: TotpSecret,
    digits: String,
    issued_step: u64,
    consumed: bool,
}

#[derive(Debug)]
struct Session {
    keys: KeyPair,
    peer: PublicKey,
    /// Outstanding challenge; also names the session in traces.
    challenge: Nonce,
    verified: bool,
    tokens: Vec<PendingToken>,
}

/// What the server keeps per registered device.
#[derive(Debug)]
pub struct RegistryEntry {
    pub device_id: PseudoUuid,
    pub authenticator: u32,
    pub authenticator_key: PublicKey,
    pub device_key: PublicKey,
    /// Honoured only while `status` is Active.
    pub long_lived_token: LongLivedToken,
    pub server_keys: KeyPair,
    pub status: DeviceStatus,
}

/// Result of a stored reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataReceipt {
    pub data: Receipt,
    /// Risk Management height of the alert the reading raised, if any.
    pub alert_height: Option<u64>,
}

/// The provider's server: session handshakes, token issuance, registration,
/// data ingestion, revocation. Writes through to the ledger as `member`.
#[derive(Debug)]
pub struct Server {
    config: ProtocolConfig,
    ledger: Arc<Ledger>,
    member: Member,
    sessions: BTreeMap<u32, Session>,
    registry: BTreeMap<PseudoUuid, RegistryEntry>,
    crl: BTreeSet<Vec<u8>>,
    issued_nonces: BTreeSet<Nonce>,
}

fn ledger_time(now: u64) -> u64 {
    now.saturating_mul(1_000_000)
}

impl Server {
    pub fn new(config: ProtocolConfig, ledger: Arc<Ledger>, member: Member) -> Self {
        Self {
            config,
            ledger,
            member,
            sessions: BTreeMap::new(),
            registry: BTreeMap::new(),
            crl: BTreeSet::new(),
            issued_nonces: BTreeSet::new(),
        }
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn member(&self) -> &Member {
        &self.member
    }

    pub fn registry(&self) -> &BTreeMap<PseudoUuid, RegistryEntry> {
        &self.registry
    }

    pub fn crl_contains(&self, key: &PublicKey) -> bool {
        self.crl.contains(&key.to_bytes())
    }

    pub fn crl_len(&self) -> usize {
        self.crl.len()
    }

    /// No active registry entry has its key on the CRL.
    pub fn registry_crl_disjoint(&self) -> bool {
        self.registry
            .values()
            .filter(|e| e.status == DeviceStatus::Active)
            .all(|e| !self.crl.contains(&e.device_key.to_bytes()))
    }

    pub fn session_key(&self, authenticator: u32) -> Option<&PublicKey> {
        self.sessions.get(&authenticator).map(|s| s.keys.public())
    }

    pub fn session_established(&self, authenticator: u32) -> bool {
        self.sessions.get(&authenticator).is_some_and(|s| s.verified)
    }

    fn fresh_nonce(&mut self, env: &mut Env<'_>) -> Nonce {
        loop {
            let n = gen_nonce(&mut env.rng);
            if self.issued_nonces.insert(n) {
                return n;
            }
        }
    }

    fn to_auth(authenticator: u32, message: Message) -> Outbound {
        Outbound::Secure { authenticator, to_server: false, message }
    }

    /// The session for `authenticator`, dropped if its keys have expired.
    fn live_session(&mut self, env: &Env<'_>, authenticator: u32) -> Result<&mut Session, ProtocolError> {
        let s = self.sessions.get(&authenticator).ok_or(ProtocolError::NoSession)?;
        if let Err(e) = s.keys.ensure_fresh(env.now) {
            self.sessions.remove(&authenticator);
            return Err(e.into());
        }
        Ok(self.sessions.get_mut(&authenticator).expect("checked above"))
    }

    /// Handles a message from `authenticator` on its secure channel.
    pub fn on_secure(
        &mut self,
        env: &mut Env<'_>,
        authenticator: u32,
        m: Message,
    ) -> Result<Vec<Outbound>, ProtocolError> {
        match m {
            Message::SessionHello { public_key } => {
                if public_key.role() != RoleTag::AuthForServer {
                    return Err(ProtocolError::Malformed("hello carries a non-authenticator key".into()));
                }
                let keys = kem_keygen(
                    RoleTag::ServerForAuth,
                    self.config.session_key_ttl,
                    env.now,
                    self.config.kem,
                    &mut env.rng,
                );
                let challenge = self.fresh_nonce(env);
                let hello = Message::SessionHello { public_key: keys.public().clone() };
                self.sessions.insert(
                    authenticator,
                    Session { keys, peer: public_key, challenge, verified: false, tokens: vec![] },
                );
                Ok(vec![
                    Self::to_auth(authenticator, hello),
                    Self::to_auth(authenticator, Message::NonceChallenge { nonce: challenge }),
                ])
            }
            Message::NonceResponse { ciphertext } => {
                let s = self.live_session(env, authenticator)?;
                let signed = SignedNonce::from_bytes(&hybrid_decrypt(s.keys.secret(), &ciphertext)?)?;
                if signed.nonce != s.challenge {
                    return Err(ProtocolError::NonceMismatch);
                }
                if !verify(&s.peer, &signing_input(LABEL_NONCE, &signed.nonce.0), &signed.signature) {
                    return Err(ProtocolError::SignatureInvalid);
                }
                s.verified = true;
                env.trace.record(Actor::Server, EventKind::SessionEstablished { authenticator });
                Ok(vec![])
            }
            Message::NonceChallenge { nonce } => {
                let s = self.live_session(env, authenticator)?;
                if !s.verified {
                    return Err(out_of_phase("server", "Unverified", "answer a challenge"));
                }
                let signature = sign(s.keys.secret(), &signing_input(LABEL_NONCE, &nonce.0));
                let peer = s.peer.clone();
                let ciphertext = hybrid_encrypt(&peer, &SignedNonce { nonce, signature }.to_bytes(), &mut env.rng)?;
                Ok(vec![Self::to_auth(authenticator, Message::NonceResponse { ciphertext })])
            }
            Message::RevocationRequest { ciphertext } => {
                self.revoke_device(env, authenticator, &ciphertext)?;
                Ok(vec![])
            }
            other => {
                Err(ProtocolError::Malformed(format!("server does not accept {} on the secure channel", other.kind())))
            }
        }
    }

    /// Issues a fresh challenge on an existing session, invalidating the old
    /// one.
    pub fn rechallenge(&mut self, env: &mut Env<'_>, authenticator: u32) -> Result<Vec<Outbound>, ProtocolError> {
        let nonce = self.fresh_nonce(env);
        let s = self.live_session(env, authenticator)?;
        s.challenge = nonce;
        s.verified = false;
        Ok(vec![Self::to_auth(authenticator, Message::NonceChallenge { nonce })])
    }

    /// New TOTP secret and token for the session, sent encrypted to the
    /// authenticator.
    pub fn issue_transient_token(
        &mut self,
        env: &mut Env<'_>,
        authenticator: u32,
    ) -> Result<Vec<Outbound>, ProtocolError> {
        let step = self.config.totp_step;
        let api_address = self.config.api_address.clone();
        let s = self.live_session(env, authenticator).map_err(|e| match e {
            ProtocolError::KeyExpired { .. } => e,
            _ => ProtocolError::NoSession,
        })?;
        if !s.verified {
            return Err(ProtocolError::NoSession);
        }
        let secret = TotpSecret::generate(&mut env.rng);
        let token = totp_generate(&secret, env.now, step);
        let grant = TokenGrant { token: token.digits.clone(), api_address };
        let peer = s.peer.clone();
        let nonce = s.challenge;
        s.tokens.push(PendingToken {
            secret,
            digits: token.digits.clone(),
            issued_step: token.issued_step,
            consumed: false,
        });
        let ciphertext = hybrid_encrypt(&peer, &grant.to_bytes(), &mut env.rng)?;
        env.symbols.bind_hybrid(
            &ciphertext,
            Term::enc(
                &peer,
                Term::tuple([Term::atom(AtomKind::Token, grant.token.as_bytes()), Term::text(&grant.api_address)]),
            ),
        );
        env.trace.record(
            Actor::Server,
            EventKind::TokenIssued { token: token_digest(&token.digits, token.issued_step), nonce },
        );
        Ok(vec![Self::to_auth(authenticator, Message::TokenDelivery { ciphertext })])
    }

    /// Handles a frame from the public network. `from` is the unauthenticated
    /// sender label, used only to address the reply. Rejections are recorded
    /// in the trace as well as returned.
    pub fn on_public(&mut self, env: &mut Env<'_>, from: Actor, bytes: &[u8]) -> Result<Vec<Outbound>, ProtocolError> {
        let m = match Message::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                let e = ProtocolError::from(e);
                env.trace.record(Actor::Server, EventKind::RequestRejected { reason: e.code().into() });
                return Err(e);
            }
        };
        match m {
            Message::RegistrationRequest { ciphertext } => {
                let r = self.register(env, from, &ciphertext);
                if let Err(e) = &r {
                    env.trace.record(Actor::Server, EventKind::RequestRejected { reason: e.code().into() });
                }
                r
            }
            Message::DataReport { ciphertext } => match self.ingest_device_data(env, &ciphertext) {
                Ok(_) => Ok(vec![]),
                Err(e) => {
                    env.trace.record(Actor::Server, EventKind::DataRejected { reason: e.code().into() });
                    Err(e)
                }
            },
            other => {
                let e =
                    ProtocolError::Malformed(format!("server does not accept {} on the public channel", other.kind()));
                env.trace.record(Actor::Server, EventKind::RequestRejected { reason: e.code().into() });
                Err(e)
            }
        }
    }

    /// Validates a registration request and, on success, activates the
    /// device.
    fn register(
        &mut self,
        env: &mut Env<'_>,
        reply_to: Actor,
        ct: &HybridCiphertext,
    ) -> Result<Vec<Outbound>, ProtocolError> {
        let opened = self
            .sessions
            .iter()
            .filter(|(_, s)| s.verified && !s.keys.is_expired(env.now))
            .find_map(|(i, s)| hybrid_decrypt(s.keys.secret(), ct).ok().map(|p| (*i, p)));
        let Some((authenticator, plain)) = opened else {
            return Err(ProtocolError::Malformed("request does not open under any session key".into()));
        };
        let body = RegistrationBody::from_bytes(&plain)?;
        let step = self.config.totp_step;
        let s = self.sessions.get_mut(&authenticator).expect("found above");
        if !verify(&s.peer, &signing_input(LABEL_TOKEN, &body.encrypted_token.to_bytes()), &body.signature) {
            return Err(ProtocolError::SignatureInvalid);
        }
        let digits = hybrid_decrypt(s.keys.secret(), &body.encrypted_token)
            .ok()
            .and_then(|b| String::from_utf8(b).ok())
            .ok_or_else(|| ProtocolError::Malformed("encrypted token does not open".into()))?;
        if body.device_key.role() != RoleTag::DeviceForServer {
            return Err(ProtocolError::Malformed("registration carries a non-device key".into()));
        }
        let pending = s.tokens.iter_mut().find(|t| t.digits == digits).ok_or(ProtocolError::TokenUnknown)?;
        if pending.consumed {
            return Err(ProtocolError::TokenConsumed);
        }
        if !totp_verify(&pending.secret, &digits, env.now, step) {
            return Err(ProtocolError::TokenExpired);
        }
        if self.crl.contains(&body.device_key.to_bytes()) {
            return Err(ProtocolError::RevokedDevice);
        }
        if self.registry.contains_key(&body.device_id) {
            return Err(ProtocolError::DuplicateDevice);
        }
        pending.consumed = true;
        let token = token_digest(&digits, pending.issued_step);
        let nonce = s.challenge;
        let authenticator_key = s.peer.clone();
        env.trace.record(
            Actor::Server,
            EventKind::DeviceRequestAccepted {
                device_id: body.device_id,
                token,
                nonce,
                signature: hash(&body.signature.bytes),
            },
        );
        self.activate_device(env, reply_to, authenticator, authenticator_key, body, token, nonce)
    }

    #[allow(clippy::too_many_arguments)]
    fn activate_device(
        &mut self,
        env: &mut Env<'_>,
        reply_to: Actor,
        authenticator: u32,
        authenticator_key: PublicKey,
        body: RegistrationBody,
        token: crate::crypto::Digest,
        nonce: Nonce,
    ) -> Result<Vec<Outbound>, ProtocolError> {
        let server_keys = kem_keygen(
            RoleTag::ServerForDevice,
            self.config.server_device_key_ttl,
            env.now,
            self.config.kem,
            &mut env.rng,
        );
        let long_lived_token = gen_long_lived_token(&mut env.rng);
        let record = DeviceRecord {
            long_lived_token: long_lived_token.clone(),
            server_key: server_keys.public().clone(),
            device_key: body.device_key.clone(),
            authenticator_key: authenticator_key.clone(),
            device_id: body.device_id,
            status: DeviceStatus::Active,
            timestamp: env.now,
        };
        let tx = self.member.transaction(ChannelId::Identity, Payload::Device(record), env.now);
        let receipt = self.ledger.submit_and_commit(tx, ledger_time(env.now)).map_err(ProtocolError::LedgerRejected)?;
        env.trace.record(
            Actor::Ledger,
            EventKind::LedgerCommit { channel: ChannelId::Identity.name().into(), height: receipt.height },
        );

        let activation =
            ActivationBody { long_lived_token: long_lived_token.clone(), server_key: server_keys.public().clone() };
        let activation_ct = hybrid_encrypt(&body.device_key, &activation.to_bytes(), &mut env.rng)?;
        let activation_term = Term::enc(&body.device_key, activation_term(&activation));
        env.symbols.bind_hybrid(&activation_ct, activation_term.clone());

        let notice = ConnectedBody { device_id: body.device_id, status: CONNECTED_STATUS.into() };
        let notice_ct = hybrid_encrypt(&authenticator_key, &notice.to_bytes(), &mut env.rng)?;

        env.trace.record(Actor::Server, EventKind::RegistrationSuccess { device_id: body.device_id, token, nonce });
        env.trace.record(
            Actor::Server,
            EventKind::KeypairDelivered {
                device_id: body.device_id,
                long_lived_token: hash(&long_lived_token.0),
                device_key: hash(&body.device_key.to_bytes()),
                server_key: hash(&server_keys.public().to_bytes()),
            },
        );
        self.registry.insert(
            body.device_id,
            RegistryEntry {
                device_id: body.device_id,
                authenticator,
                authenticator_key,
                device_key: body.device_key,
                long_lived_token,
                server_keys,
                status: DeviceStatus::Active,
            },
        );
        Ok(vec![
            Outbound::Public {
                from: Actor::Server,
                to: reply_to,
                message: Message::ActivationResponse { ciphertext: activation_ct },
                term: activation_term,
            },
            Self::to_auth(authenticator, Message::ConnectedNotice { ciphertext: notice_ct }),
        ])
    }

    /// Stores a reading from an active device on the Data channel.
    pub fn ingest_device_data(
        &mut self,
        env: &mut Env<'_>,
        ct: &HybridCiphertext,
    ) -> Result<DataReceipt, ProtocolError> {
        let (entry, plain) = self
            .registry
            .values()
            .find_map(|e| {
                let secret = e.server_keys.secret_at(env.now).ok()?;
                hybrid_decrypt(secret, ct).ok().map(|p| (e, p))
            })
            .ok_or(ProtocolError::UnknownDevice)?;
        if entry.status != DeviceStatus::Active || self.crl.contains(&entry.device_key.to_bytes()) {
            return Err(ProtocolError::RevokedDevice);
        }
        let body = ReportBody::from_bytes(&plain)?;
        if body.device_id != entry.device_id || entry.long_lived_token != body.long_lived_token {
            return Err(ProtocolError::TokenMismatch);
        }
        let data = DataEntry {
            device_id: body.device_id,
            metric: body.reading.metric,
            value: body.reading.value,
            unit: body.reading.unit,
            manufacturer: body.reading.manufacturer,
            device_key: entry.device_key.clone(),
            timestamp: env.now,
        };
        let metric = data.metric.clone();
        let risk_before = self.ledger.height(ChannelId::RiskManagement);
        let tx = self.member.transaction(ChannelId::Data, Payload::Data(data), env.now);
        let receipt = self.ledger.submit_and_commit(tx, ledger_time(env.now)).map_err(ProtocolError::LedgerRejected)?;
        env.trace.record(
            Actor::Ledger,
            EventKind::LedgerCommit { channel: ChannelId::Data.name().into(), height: receipt.height },
        );
        env.trace.record(Actor::Server, EventKind::DataStored { device_id: body.device_id });
        let risk_after = self.ledger.height(ChannelId::RiskManagement);
        let alert_height = (risk_after > risk_before).then_some(risk_after);
        if let Some(height) = alert_height {
            env.trace.record(
                Actor::Ledger,
                EventKind::LedgerCommit { channel: ChannelId::RiskManagement.name().into(), height },
            );
            env.trace.record(Actor::Server, EventKind::RiskAlert { device_id: body.device_id, metric });
        }
        Ok(DataReceipt { data: receipt, alert_height })
    }

    /// Deactivates a device owned by `authenticator`: a new Deactivated
    /// record on the Identity channel, and the device key onto the CRL.
    pub fn revoke_device(
        &mut self,
        env: &mut Env<'_>,
        authenticator: u32,
        ct: &HybridCiphertext,
    ) -> Result<Receipt, ProtocolError> {
        let s = self.live_session(env, authenticator)?;
        if !s.verified {
            return Err(ProtocolError::NoSession);
        }
        let body = RevocationBody::from_bytes(&hybrid_decrypt(s.keys.secret(), ct)?)?;
        if body.command != REVOKE_COMMAND {
            return Err(ProtocolError::Malformed(format!("unknown command `{}`", body.command)));
        }
        let entry = self.registry.get(&body.device_id).ok_or(ProtocolError::UnknownDevice)?;
        if entry.authenticator != authenticator {
            return Err(ProtocolError::NotOwner);
        }
        if entry.status != DeviceStatus::Active {
            return Err(ProtocolError::AlreadyRevoked);
        }
        let record = DeviceRecord {
            long_lived_token: entry.long_lived_token.clone(),
            server_key: entry.server_keys.public().clone(),
            device_key: entry.device_key.clone(),
            authenticator_key: entry.authenticator_key.clone(),
            device_id: entry.device_id,
            status: DeviceStatus::Deactivated,
            timestamp: env.now,
        };
        let tx = self.member.transaction(ChannelId::Identity, Payload::Device(record), env.now);
        let receipt = self.ledger.submit_and_commit(tx, ledger_time(env.now)).map_err(ProtocolError::LedgerRejected)?;
        env.trace.record(
            Actor::Ledger,
            EventKind::LedgerCommit { channel: ChannelId::Identity.name().into(), height: receipt.height },
        );
        let entry = self.registry.get_mut(&body.device_id).expect("looked up above");
        entry.status = DeviceStatus::Deactivated;
        self.crl.insert(entry.device_key.to_bytes());
        env.trace.record(Actor::Server, EventKind::Revoked { device_id: body.device_id });
        Ok(receipt)
    }
}

impl RegistryEntry {
    /// The activation plaintext the server sent this device.
    pub fn activation(&self) -> ActivationBody {
        ActivationBody {
            long_lived_token: self.long_lived_token.clone(),
            server_key: self.server_keys.public().clone(),
        }
    }
}

/// Symbolic activation plaintext: the pair that must stay confidential.
pub fn activation_term(a: &ActivationBody) -> Term {
    Term::tuple([Term::atom(AtomKind::LongLivedToken, a.long_lived_token.0), Term::public_key(&a.server_key)])
}
