//! Deterministic sample messages, one per variant. Used by the golden-file
//! test, the fuzz corpus seed, and the `wire_dump` example.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{
    hybrid_encrypt, kem_keygen, link_seal, sign, KemAlgorithm, KeyPair, LinkKey, LongLivedToken, Nonce, PseudoUuid,
    PublicKey, RoleTag,
};

use super::{
    signing_input, ActivationBody, ConnectedBody, Encode, Message, ProvisionBundle, Reading, RegistrationBody,
    ReportBody, RevocationBody, SignedNonce, TokenGrant, CONNECTED_STATUS, LABEL_NONCE, LABEL_TOKEN, REVOKE_COMMAND,
};

const FIXTURE_SEED: u64 = 0x0b0a_4d00;
const FIXTURE_TIME: u64 = 1_700_000_010;

pub struct FixtureKeys {
    pub server_for_auth: KeyPair,
    pub auth_for_server: KeyPair,
    pub device_for_server: KeyPair,
    pub server_for_device: KeyPair,
    pub link: LinkKey,
}

pub struct FixturePayloads {
    pub signed_nonce: SignedNonce,
    pub token_grant: TokenGrant,
    pub provision: ProvisionBundle,
    pub registration: RegistrationBody,
    pub activation: ActivationBody,
    pub connected: ConnectedBody,
    pub report: ReportBody,
    pub revocation: RevocationBody,
}

fn rng(offset: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(FIXTURE_SEED + offset)
}

pub fn keys() -> FixtureKeys {
    let mut r = rng(0);
    let mut gen = |role| kem_keygen(role, 86_400, FIXTURE_TIME, KemAlgorithm::X25519, &mut r);
    FixtureKeys {
        server_for_auth: gen(RoleTag::ServerForAuth),
        auth_for_server: gen(RoleTag::AuthForServer),
        device_for_server: gen(RoleTag::DeviceForServer),
        server_for_device: gen(RoleTag::ServerForDevice),
        link: LinkKey([0x5a; 32]),
    }
}

pub fn public_keys() -> Vec<PublicKey> {
    let k = keys();
    vec![
        k.server_for_auth.public().clone(),
        k.auth_for_server.public().clone(),
        k.device_for_server.public().clone(),
        k.server_for_device.public().clone(),
    ]
}

pub fn payloads() -> FixturePayloads {
    let k = keys();
    let mut r = rng(1);
    let nonce = Nonce([0x11; 16]);
    let device_id = PseudoUuid([0x22; 16]);
    let encrypted_token = hybrid_encrypt(k.server_for_auth.public(), b"94287082", &mut r).expect("fixture encrypt");
    let token_sig = sign(k.auth_for_server.secret(), &signing_input(LABEL_TOKEN, &encrypted_token.to_bytes()));
    FixturePayloads {
        signed_nonce: SignedNonce {
            nonce,
            signature: sign(k.auth_for_server.secret(), &signing_input(LABEL_NONCE, &nonce.0)),
        },
        token_grant: TokenGrant { token: "94287082".into(), api_address: "https://api.example/onboard".into() },
        provision: ProvisionBundle {
            api_address: "https://api.example/onboard".into(),
            server_key: k.server_for_auth.public().clone(),
            encrypted_token: encrypted_token.clone(),
            signature: token_sig.clone(),
        },
        registration: RegistrationBody {
            device_key: k.device_for_server.public().clone(),
            device_id,
            encrypted_token,
            signature: token_sig,
        },
        activation: ActivationBody {
            long_lived_token: LongLivedToken([0x33; 32]),
            server_key: k.server_for_device.public().clone(),
        },
        connected: ConnectedBody { device_id, status: CONNECTED_STATUS.into() },
        report: ReportBody {
            device_id,
            reading: Reading {
                metric: "temperature_c".into(),
                value: 21.5,
                unit: "C".into(),
                manufacturer: "acme-sensors".into(),
            },
            long_lived_token: LongLivedToken([0x33; 32]),
        },
        revocation: RevocationBody { command: REVOKE_COMMAND.into(), device_id },
    }
}

/// One message per variant, in tag order.
pub fn messages() -> Vec<Message> {
    let k = keys();
    let p = payloads();
    let mut r = rng(2);
    let mut enc = |to: &KeyPair, body: &dyn Encode| {
        hybrid_encrypt(to.public(), &body.to_bytes(), &mut r).expect("fixture encrypt")
    };
    let nonce_response = enc(&k.server_for_auth, &p.signed_nonce);
    let token_delivery = enc(&k.auth_for_server, &p.token_grant);
    let registration = enc(&k.server_for_auth, &p.registration);
    let activation = enc(&k.device_for_server, &p.activation);
    let connected = enc(&k.auth_for_server, &p.connected);
    let report = enc(&k.server_for_device, &p.report);
    let revocation = enc(&k.server_for_auth, &p.revocation);
    let provision = link_seal(&k.link, &p.provision.to_bytes(), &mut rng(3)).expect("fixture seal");
    vec![
        Message::SessionHello { public_key: k.auth_for_server.public().clone() },
        Message::NonceChallenge { nonce: p.signed_nonce.nonce },
        Message::NonceResponse { ciphertext: nonce_response },
        Message::TokenDelivery { ciphertext: token_delivery },
        Message::DeviceProvision { ciphertext: provision },
        Message::RegistrationRequest { ciphertext: registration },
        Message::ActivationResponse { ciphertext: activation },
        Message::ConnectedNotice { ciphertext: connected },
        Message::DataReport { ciphertext: report },
        Message::RevocationRequest { ciphertext: revocation },
    ]
}
