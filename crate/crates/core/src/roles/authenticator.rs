use crate::channels::{Actor, AtomKind, EventKind, Term};
use crate::crypto::{
    gen_nonce, hybrid_decrypt, hybrid_encrypt, kem_keygen, link_seal, sign, verify, KeyPair, LinkKey, Nonce,
    PseudoUuid, PublicKey, RoleTag,
};
use crate::wire::{
    signing_input, ConnectedBody, Decode, Encode, Message, ProvisionBundle, RevocationBody, SignedNonce, TokenGrant,
    CONNECTED_STATUS, LABEL_NONCE, LABEL_TOKEN, REVOKE_COMMAND,
};

use super::{out_of_phase, Env, Outbound, ProtocolConfig, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthPhase {
    Idle,
    SessionEstablished,
    AwaitingToken,
    TokenForwarded,
    DeviceConnected,
}

/// The user's handheld: logs in to the server, fetches transient tokens, and
/// hands them to devices over the shared link key.
#[derive(Debug)]
pub struct Authenticator {
    index: u32,
    config: ProtocolConfig,
    link_key: LinkKey,
    keys: Option<KeyPair>,
    server_key: Option<PublicKey>,
    /// Nonce we challenged the server with.
    own_nonce: Option<Nonce>,
    /// Nonce the server challenged us with; names the session in traces.
    server_nonce: Option<Nonce>,
    grant: Option<TokenGrant>,
    phase: AuthPhase,
    connected: Vec<PseudoUuid>,
}

impl Authenticator {
    pub fn new(index: u32, link_key: LinkKey, config: ProtocolConfig) -> Self {
        Self {
            index,
            config,
            link_key,
            keys: None,
            server_key: None,
            own_nonce: None,
            server_nonce: None,
            grant: None,
            phase: AuthPhase::Idle,
            connected: Vec::new(),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn actor(&self) -> Actor {
        Actor::Authenticator(self.index)
    }

    pub fn phase(&self) -> AuthPhase {
        self.phase
    }

    pub fn public_key(&self) -> Option<&PublicKey> {
        self.keys.as_ref().map(KeyPair::public)
    }

    pub fn server_key(&self) -> Option<&PublicKey> {
        self.server_key.as_ref()
    }

    pub fn link_key(&self) -> &LinkKey {
        &self.link_key
    }

    /// Devices the server has confirmed as connected.
    pub fn connected(&self) -> &[PseudoUuid] {
        &self.connected
    }

    /// Fresh session keys and the opening hello. Only from `Idle`.
    pub fn login(&mut self, env: &mut Env<'_>) -> Result<Vec<Outbound>, ProtocolError> {
        if self.phase != AuthPhase::Idle {
            return Err(out_of_phase("authenticator", self.phase, "log in"));
        }
        let keys =
            kem_keygen(RoleTag::AuthForServer, self.config.session_key_ttl, env.now, self.config.kem, &mut env.rng);
        let hello = Message::SessionHello { public_key: keys.public().clone() };
        self.keys = Some(keys);
        self.server_key = None;
        self.own_nonce = None;
        self.server_nonce = None;
        self.grant = None;
        Ok(vec![self.to_server(hello)])
    }

    /// Drops the session, e.g. after an expiry was reported.
    pub fn logout(&mut self) {
        self.keys = None;
        self.server_key = None;
        self.grant = None;
        self.phase = AuthPhase::Idle;
    }

    fn to_server(&self, message: Message) -> Outbound {
        Outbound::Secure { authenticator: self.index, to_server: true, message }
    }

    /// Session keys, failing (and resetting to `Idle`) once they expire.
    fn fresh_keys(&mut self, env: &Env<'_>) -> Result<&KeyPair, ProtocolError> {
        let keys = self.keys.as_ref().ok_or(ProtocolError::NoSession)?;
        if let Err(e) = keys.ensure_fresh(env.now) {
            self.logout();
            return Err(e.into());
        }
        Ok(self.keys.as_ref().expect("checked above"))
    }

    fn established(&self) -> bool {
        !matches!(self.phase, AuthPhase::Idle)
    }

    /// Handles a message from the server on the secure channel.
    pub fn on_secure(&mut self, env: &mut Env<'_>, m: Message) -> Result<Vec<Outbound>, ProtocolError> {
        match m {
            Message::SessionHello { public_key } => {
                if self.keys.is_none() || self.established() || self.server_key.is_some() {
                    return Err(out_of_phase("authenticator", self.phase, "accept a server hello"));
                }
                if public_key.role() != RoleTag::ServerForAuth {
                    return Err(ProtocolError::Malformed("server hello carries a non-server key".into()));
                }
                self.server_key = Some(public_key);
                Ok(vec![])
            }
            Message::NonceChallenge { nonce } => {
                let Some(server_key) = self.server_key.clone() else {
                    return Err(out_of_phase("authenticator", self.phase, "answer a challenge"));
                };
                if self.established() {
                    return Err(out_of_phase("authenticator", self.phase, "answer a challenge"));
                }
                let keys = self.fresh_keys(env)?;
                let signature = sign(keys.secret(), &signing_input(LABEL_NONCE, &nonce.0));
                let ciphertext =
                    hybrid_encrypt(&server_key, &SignedNonce { nonce, signature }.to_bytes(), &mut env.rng)?;
                let own = gen_nonce(&mut env.rng);
                self.server_nonce = Some(nonce);
                self.own_nonce = Some(own);
                Ok(vec![
                    self.to_server(Message::NonceResponse { ciphertext }),
                    self.to_server(Message::NonceChallenge { nonce: own }),
                ])
            }
            Message::NonceResponse { ciphertext } => {
                let (Some(expected), Some(server_key)) = (self.own_nonce, self.server_key.clone()) else {
                    return Err(out_of_phase("authenticator", self.phase, "check a nonce response"));
                };
                if self.established() {
                    return Err(out_of_phase("authenticator", self.phase, "check a nonce response"));
                }
                let keys = self.fresh_keys(env)?;
                let plain = hybrid_decrypt(keys.secret(), &ciphertext)?;
                let signed = SignedNonce::from_bytes(&plain)?;
                if signed.nonce != expected {
                    return Err(ProtocolError::NonceMismatch);
                }
                if !verify(&server_key, &signing_input(LABEL_NONCE, &signed.nonce.0), &signed.signature) {
                    return Err(ProtocolError::SignatureInvalid);
                }
                self.phase = AuthPhase::SessionEstablished;
                env.trace.record(self.actor(), EventKind::SessionEstablished { authenticator: self.index });
                Ok(vec![])
            }
            Message::TokenDelivery { ciphertext } => {
                if self.phase != AuthPhase::AwaitingToken {
                    return Err(out_of_phase("authenticator", self.phase, "accept a token"));
                }
                let keys = self.fresh_keys(env)?;
                let grant = TokenGrant::from_bytes(&hybrid_decrypt(keys.secret(), &ciphertext)?)?;
                self.grant = Some(grant);
                Ok(vec![])
            }
            Message::ConnectedNotice { ciphertext } => {
                if !self.established() {
                    return Err(out_of_phase("authenticator", self.phase, "accept a connected notice"));
                }
                let keys = self.fresh_keys(env)?;
                let body = ConnectedBody::from_bytes(&hybrid_decrypt(keys.secret(), &ciphertext)?)?;
                if body.status != CONNECTED_STATUS {
                    return Err(ProtocolError::Malformed(format!("unexpected status `{}`", body.status)));
                }
                self.connected.push(body.device_id);
                if self.phase == AuthPhase::TokenForwarded {
                    self.phase = AuthPhase::DeviceConnected;
                }
                env.trace.record(self.actor(), EventKind::DeviceConnected { device_id: body.device_id });
                Ok(vec![])
            }
            other => Err(ProtocolError::Malformed(format!("authenticator does not accept {}", other.kind()))),
        }
    }

    /// Marks the start of a token request. The request itself is a local call
    /// on the server ([`super::Server::issue_transient_token`]).
    pub fn request_token(&mut self, env: &Env<'_>) -> Result<(), ProtocolError> {
        match self.phase {
            AuthPhase::SessionEstablished | AuthPhase::TokenForwarded | AuthPhase::DeviceConnected => {
                self.fresh_keys(env)?;
                self.grant = None;
                self.phase = AuthPhase::AwaitingToken;
                Ok(())
            }
            p => Err(out_of_phase("authenticator", p, "request a token")),
        }
    }

    pub fn has_token(&self) -> bool {
        self.grant.is_some()
    }

    /// Encrypts the token to the server, signs the ciphertext, and seals the
    /// bundle for `device` under the link key.
    pub fn provision_device(&mut self, env: &mut Env<'_>, device: Actor) -> Result<Vec<Outbound>, ProtocolError> {
        if self.phase != AuthPhase::AwaitingToken || self.grant.is_none() {
            return Err(out_of_phase("authenticator", self.phase, "provision a device"));
        }
        let server_key = self.server_key.clone().ok_or(ProtocolError::NoSession)?;
        let keys = self.fresh_keys(env)?.clone();
        let grant = self.grant.take().expect("checked above");

        let encrypted_token = hybrid_encrypt(&server_key, grant.token.as_bytes(), &mut env.rng)?;
        let token_term = Term::enc(&server_key, Term::atom(AtomKind::Token, grant.token.as_bytes()));
        env.symbols.bind_hybrid(&encrypted_token, token_term.clone());

        let signature = sign(keys.secret(), &signing_input(LABEL_TOKEN, &encrypted_token.to_bytes()));
        let sig_term = Term::sig(keys.public(), token_term.clone());
        env.symbols.bind_signature(&signature, sig_term.clone());

        let bundle = ProvisionBundle {
            api_address: grant.api_address.clone(),
            server_key: server_key.clone(),
            encrypted_token,
            signature,
        };
        let ciphertext = link_seal(&self.link_key, &bundle.to_bytes(), &mut env.rng)?;
        let term = Term::sym(
            &self.link_key,
            Term::tuple([Term::text(&grant.api_address), Term::public_key(&server_key), token_term, sig_term]),
        );
        env.symbols.bind_link(&ciphertext, term.clone());
        self.phase = AuthPhase::TokenForwarded;
        Ok(vec![Outbound::Public {
            from: self.actor(),
            to: device,
            message: Message::DeviceProvision { ciphertext },
            term,
        }])
    }

    /// Asks the server to deactivate `device_id`.
    pub fn revoke(&mut self, env: &mut Env<'_>, device_id: PseudoUuid) -> Result<Vec<Outbound>, ProtocolError> {
        if !self.established() {
            return Err(out_of_phase("authenticator", self.phase, "revoke a device"));
        }
        self.fresh_keys(env)?;
        let server_key = self.server_key.clone().ok_or(ProtocolError::NoSession)?;
        let body = RevocationBody { command: REVOKE_COMMAND.into(), device_id };
        let ciphertext = hybrid_encrypt(&server_key, &body.to_bytes(), &mut env.rng)?;
        Ok(vec![self.to_server(Message::RevocationRequest { ciphertext })])
    }
}
