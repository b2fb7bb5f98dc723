use crate::channels::{Actor, AtomKind, EventKind, Term};
use crate::crypto::{
    gen_pseudo_uuid, hybrid_decrypt, hybrid_encrypt, kem_keygen, link_open, KeyPair, LinkKey, PseudoUuid, PublicKey,
    RoleTag,
};
use crate::wire::{ActivationBody, Decode, Encode, Message, ProvisionBundle, Reading, RegistrationBody, ReportBody};

use super::{out_of_phase, Env, Outbound, ProtocolConfig, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DevicePhase {
    Unprovisioned,
    Provisioned,
    RequestSent,
    Active,
}

/// An IoT device: receives the bundle over the link key, registers with the
/// server, and reports readings once active.
#[derive(Debug)]
pub struct Device {
    index: u32,
    config: ProtocolConfig,
    keys: KeyPair,
    device_id: PseudoUuid,
    link_key: LinkKey,
    manufacturer: String,
    bundle: Option<ProvisionBundle>,
    activation: Option<ActivationBody>,
    phase: DevicePhase,
    last_request: Option<Outbound>,
    retries_left: u32,
    provisions: u32,
}

impl Device {
    /// Generates the device pair and pseudo-UUID at `env.now`.
    pub fn new(
        index: u32,
        link_key: LinkKey,
        manufacturer: impl Into<String>,
        config: ProtocolConfig,
        env: &mut Env<'_>,
    ) -> Self {
        let keys = kem_keygen(RoleTag::DeviceForServer, config.device_key_ttl, env.now, config.kem, &mut env.rng);
        let device_id = gen_pseudo_uuid(&mut env.rng);
        let retries_left = config.registration_retries;
        Self {
            index,
            config,
            keys,
            device_id,
            link_key,
            manufacturer: manufacturer.into(),
            bundle: None,
            activation: None,
            phase: DevicePhase::Unprovisioned,
            last_request: None,
            retries_left,
            provisions: 0,
        }
    }

    pub fn actor(&self) -> Actor {
        Actor::Device(self.index)
    }

    pub fn phase(&self) -> DevicePhase {
        self.phase
    }

    pub fn device_id(&self) -> PseudoUuid {
        self.device_id
    }

    pub fn public_key(&self) -> &PublicKey {
        self.keys.public()
    }

    pub fn manufacturer(&self) -> &str {
        &self.manufacturer
    }

    pub fn activation(&self) -> Option<&ActivationBody> {
        self.activation.as_ref()
    }

    /// Symbolic secret key, for confidentiality checks.
    pub fn secret_term(&self) -> Term {
        Term::secret_key(self.keys.secret())
    }

    pub fn retries_left(&self) -> u32 {
        self.retries_left
    }

    /// How many provisioning bundles this device has accepted.
    pub fn provisions(&self) -> u32 {
        self.provisions
    }

    /// Handles a frame from the public network.
    pub fn on_public(&mut self, env: &mut Env<'_>, bytes: &[u8]) -> Result<Vec<Outbound>, ProtocolError> {
        match Message::decode(bytes)? {
            Message::DeviceProvision { ciphertext } => {
                if self.phase == DevicePhase::Active {
                    return Err(out_of_phase("device", self.phase, "accept provisioning"));
                }
                let plain = link_open(&self.link_key, &ciphertext).map_err(|_| ProtocolError::LinkKeyMismatch)?;
                self.bundle = Some(ProvisionBundle::from_bytes(&plain)?);
                self.phase = DevicePhase::Provisioned;
                self.provisions += 1;
                self.retries_left = self.config.registration_retries;
                env.trace.record(self.actor(), EventKind::DeviceProvisioned);
                Ok(vec![])
            }
            Message::ActivationResponse { ciphertext } => {
                // Any activation encrypted to our key is accepted: nothing in
                // the message ties it to the server session.
                if self.phase != DevicePhase::RequestSent {
                    return Err(out_of_phase("device", self.phase, "accept activation"));
                }
                let secret = self.keys.secret_at(env.now)?;
                let body = ActivationBody::from_bytes(&hybrid_decrypt(secret, &ciphertext)?)?;
                if body.server_key.role() != RoleTag::ServerForDevice {
                    return Err(ProtocolError::Malformed("activation carries a non-device server key".into()));
                }
                self.activation = Some(body);
                self.phase = DevicePhase::Active;
                self.last_request = None;
                env.trace.record(self.actor(), EventKind::DeviceActivated { device_id: self.device_id });
                Ok(vec![])
            }
            other => Err(ProtocolError::Malformed(format!("device does not accept {}", other.kind()))),
        }
    }

    /// Builds the registration request, encrypted to the server session key
    /// from the bundle.
    pub fn build_registration_request(&mut self, env: &mut Env<'_>) -> Result<Vec<Outbound>, ProtocolError> {
        let bundle = match (self.phase, &self.bundle) {
            (DevicePhase::Provisioned, Some(b)) => b.clone(),
            (DevicePhase::Unprovisioned, _) => return Err(ProtocolError::NotProvisioned),
            (p, _) => return Err(out_of_phase("device", p, "send a registration request")),
        };
        self.keys.ensure_fresh(env.now)?;
        let body = RegistrationBody {
            device_key: self.keys.public().clone(),
            device_id: self.device_id,
            encrypted_token: bundle.encrypted_token.clone(),
            signature: bundle.signature.clone(),
        };
        let ciphertext = hybrid_encrypt(&bundle.server_key, &body.to_bytes(), &mut env.rng)?;
        let term = Term::enc(
            &bundle.server_key,
            Term::tuple([
                Term::public_key(self.keys.public()),
                Term::atom(AtomKind::DeviceId, self.device_id.0),
                env.symbols.hybrid(&bundle.encrypted_token),
                env.symbols.signature(&bundle.signature),
            ]),
        );
        env.symbols.bind_hybrid(&ciphertext, term.clone());
        let out = Outbound::Public {
            from: self.actor(),
            to: Actor::Server,
            message: Message::RegistrationRequest { ciphertext },
            term,
        };
        self.phase = DevicePhase::RequestSent;
        self.last_request = Some(out.clone());
        env.trace.record(self.actor(), EventKind::DeviceRequestSent { device_id: self.device_id });
        Ok(vec![out])
    }

    /// Resends the last request if no activation has arrived and retries
    /// remain. Returns nothing otherwise.
    pub fn retry_registration(&mut self, env: &mut Env<'_>) -> Vec<Outbound> {
        if self.phase != DevicePhase::RequestSent || self.retries_left == 0 {
            return vec![];
        }
        let Some(out) = self.last_request.clone() else { return vec![] };
        self.retries_left -= 1;
        env.trace.record(self.actor(), EventKind::DeviceRequestSent { device_id: self.device_id });
        vec![out]
    }

    /// Encrypts a reading to the per-device server key.
    pub fn report(
        &mut self,
        env: &mut Env<'_>,
        metric: &str,
        value: f64,
        unit: &str,
    ) -> Result<Vec<Outbound>, ProtocolError> {
        let Some(activation) = self.activation.clone() else {
            return Err(out_of_phase("device", self.phase, "report data"));
        };
        let body = ReportBody {
            device_id: self.device_id,
            reading: Reading {
                metric: metric.into(),
                value,
                unit: unit.into(),
                manufacturer: self.manufacturer.clone(),
            },
            long_lived_token: activation.long_lived_token.clone(),
        };
        let ciphertext = hybrid_encrypt(&activation.server_key, &body.to_bytes(), &mut env.rng)?;
        let term = Term::enc(
            &activation.server_key,
            Term::tuple([
                Term::atom(AtomKind::DeviceId, self.device_id.0),
                Term::text(metric),
                Term::atom(AtomKind::Number, value.to_be_bytes()),
                Term::text(unit),
                Term::text(&self.manufacturer),
                Term::atom(AtomKind::LongLivedToken, activation.long_lived_token.0),
            ]),
        );
        env.symbols.bind_hybrid(&ciphertext, term.clone());
        Ok(vec![Outbound::Public {
            from: self.actor(),
            to: Actor::Server,
            message: Message::DataReport { ciphertext },
            term,
        }])
    }
}
