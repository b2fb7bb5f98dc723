//! Adversary strategies over the public channel.
//!
//! A strategy sees the frames in custody and the attacker's knowledge and
//! picks one action at a time. Forged frames are built only from terms the
//! attacker can derive; fresh values it invents are learned first.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{Actor, AdversaryAction, AtomKind, PublicChannel, SymbolTable, Term};
use crate::crypto::{
    gen_long_lived_token, gen_pseudo_uuid, hybrid_encrypt, kem_keygen, sign, HybridCiphertext, KemAlgorithm, KeyPair,
    PseudoUuid, PublicKey, RoleTag,
};
use crate::wire::{signing_input, ActivationBody, Encode, Message, Reading, RegistrationBody, ReportBody, LABEL_TOKEN};

/// One scheduler decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Act(AdversaryAction),
    /// Let the clock run for this many seconds.
    Wait(u64),
}

/// Public keys the attacker can look up. Public keys are public: the world
/// also adds them to the attacker's knowledge.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    /// Server session keys by authenticator.
    pub session_keys: Vec<(u32, PublicKey)>,
    pub device_keys: Vec<(u32, PublicKey)>,
    /// Per-device server keys handed out at activation.
    pub server_device_keys: Vec<PublicKey>,
    pub devices: u32,
}

impl Directory {
    pub fn all_keys(&self) -> impl Iterator<Item = &PublicKey> {
        self.session_keys
            .iter()
            .map(|(_, k)| k)
            .chain(self.device_keys.iter().map(|(_, k)| k))
            .chain(self.server_device_keys.iter())
    }
}

/// The attacker's own material.
#[derive(Debug, Default)]
pub struct Attacker {
    keys: Option<KeyPair>,
    /// Device ids the attacker made up.
    pub forged_ids: BTreeSet<PseudoUuid>,
    pub injected: u32,
}

pub struct AdversaryCtx<'a> {
    pub public: &'a mut PublicChannel,
    pub symbols: &'a mut SymbolTable,
    pub rng: &'a mut ChaCha20Rng,
    pub now: u64,
    pub kem: KemAlgorithm,
    pub directory: &'a Directory,
    pub attacker: &'a mut Attacker,
}

pub trait Strategy {
    /// Next decision, or `None` to let the run finish.
    fn decide(&mut self, ctx: &mut AdversaryCtx<'_>) -> Option<Decision>;
}

/// Delivers every frame in order. The honest network.
#[derive(Debug, Default, Clone, Copy)]
pub struct Passive;

impl Strategy for Passive {
    fn decide(&mut self, ctx: &mut AdversaryCtx<'_>) -> Option<Decision> {
        ctx.public.pending().next().map(|f| Decision::Act(AdversaryAction::Deliver(f.index)))
    }
}

impl AdversaryCtx<'_> {
    fn attacker_keys(&mut self) -> KeyPair {
        if self.attacker.keys.is_none() {
            let k = kem_keygen(RoleTag::DeviceForServer, u64::MAX / 4, self.now, self.kem, &mut *self.rng);
            self.public.learn(Term::secret_key(k.secret()));
            self.public.learn(Term::public_key(k.public()));
            self.attacker.keys = Some(k);
        }
        self.attacker.keys.clone().expect("set above")
    }

    fn fresh_device_id(&mut self) -> PseudoUuid {
        let id = gen_pseudo_uuid(&mut *self.rng);
        self.public.learn(Term::atom(AtomKind::DeviceId, id.0));
        self.attacker.forged_ids.insert(id);
        id
    }

    fn encrypt(&mut self, to: &PublicKey, plain: &[u8], term: Term) -> HybridCiphertext {
        let ct = hybrid_encrypt(to, plain, &mut *self.rng).expect("non-empty plaintext");
        self.symbols.bind_hybrid(&ct, term);
        ct
    }

    fn inject(&mut self, to: Actor, message: Message) -> Decision {
        let term = self.symbols.message(&message);
        self.attacker.injected += 1;
        // Claim to be a plausible sender; the label is not authenticated.
        let from = match to {
            Actor::Server => Actor::Device(0),
            _ => Actor::Server,
        };
        Decision::Act(AdversaryAction::Inject { from, to, bytes: message.encode(), term })
    }

    /// A registration request encrypted to `session_key`, signed with the
    /// attacker's key. `device_key` defaults to the attacker's own;
    /// `token_ct` defaults to a guessed token encrypted to the session key.
    pub fn forge_registration(
        &mut self,
        session_key: &PublicKey,
        device_key: Option<PublicKey>,
        token_ct: Option<HybridCiphertext>,
    ) -> Decision {
        let keys = self.attacker_keys();
        let device_key = device_key.unwrap_or_else(|| keys.public().clone());
        let device_id = self.fresh_device_id();
        let (encrypted_token, token_term) = match token_ct {
            Some(ct) => {
                let t = self.symbols.hybrid(&ct);
                (ct, t)
            }
            None => {
                let guess = format!("{:08}", self.rng.gen_range(0..100_000_000u32));
                let atom = Term::atom(AtomKind::Token, guess.as_bytes());
                self.public.learn(atom.clone());
                let term = Term::enc(session_key, atom);
                (self.encrypt(session_key, guess.as_bytes(), term.clone()), term)
            }
        };
        let signature = sign(keys.secret(), &signing_input(LABEL_TOKEN, &encrypted_token.to_bytes()));
        let sig_term = Term::sig(keys.public(), token_term.clone());
        self.symbols.bind_signature(&signature, sig_term.clone());
        let body = RegistrationBody { device_key: device_key.clone(), device_id, encrypted_token, signature };
        let term = Term::enc(
            session_key,
            Term::tuple([
                Term::public_key(&device_key),
                Term::atom(AtomKind::DeviceId, device_id.0),
                token_term,
                sig_term,
            ]),
        );
        let ciphertext = self.encrypt(session_key, &body.to_bytes(), term);
        self.inject(Actor::Server, Message::RegistrationRequest { ciphertext })
    }

    /// An activation of the attacker's making, sent to `device`.
    pub fn forge_activation(&mut self, device: u32, device_key: &PublicKey) -> Decision {
        let server = kem_keygen(RoleTag::ServerForDevice, u64::MAX / 4, self.now, self.kem, &mut *self.rng);
        self.public.learn(Term::secret_key(server.secret()));
        self.public.learn(Term::public_key(server.public()));
        let token = gen_long_lived_token(&mut *self.rng);
        self.public.learn(Term::atom(AtomKind::LongLivedToken, token.0));
        let body = ActivationBody { long_lived_token: token, server_key: server.public().clone() };
        let term = Term::enc(device_key, crate::roles::activation_term(&body));
        let ciphertext = self.encrypt(device_key, &body.to_bytes(), term);
        self.inject(Actor::Device(device), Message::ActivationResponse { ciphertext })
    }

    /// A data report with a guessed long-lived token.
    pub fn forge_report(&mut self, server_key: &PublicKey) -> Decision {
        let device_id = self.fresh_device_id();
        let token = gen_long_lived_token(&mut *self.rng);
        self.public.learn(Term::atom(AtomKind::LongLivedToken, token.0));
        let value = self.rng.gen_range(-20.0..120.0f64);
        let reading = Reading { metric: "temperature_c".into(), value, unit: "C".into(), manufacturer: "acme".into() };
        for t in [
            Term::text("temperature_c"),
            Term::text("C"),
            Term::text("acme"),
            Term::atom(AtomKind::Number, value.to_be_bytes()),
        ] {
            self.public.learn(t);
        }
        let term = Term::enc(
            server_key,
            Term::tuple([
                Term::atom(AtomKind::DeviceId, device_id.0),
                Term::text("temperature_c"),
                Term::atom(AtomKind::Number, value.to_be_bytes()),
                Term::text("C"),
                Term::text("acme"),
                Term::atom(AtomKind::LongLivedToken, token.0),
            ]),
        );
        let body = ReportBody { device_id, reading, long_lived_token: token };
        let ciphertext = self.encrypt(server_key, &body.to_bytes(), term);
        self.inject(Actor::Server, Message::DataReport { ciphertext })
    }
}

/// Relative weights of the randomized adversary's choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    pub deliver: u32,
    pub drop: u32,
    pub duplicate: u32,
    pub replay: u32,
    pub tamper: u32,
    pub inject: u32,
    pub wait: u32,
}

impl Default for Weights {
    fn default() -> Self {
        Self { deliver: 8, drop: 1, duplicate: 1, replay: 2, tamper: 1, inject: 2, wait: 1 }
    }
}

impl Weights {
    fn as_array(&self) -> [u32; 7] {
        [self.deliver, self.drop, self.duplicate, self.replay, self.tamper, self.inject, self.wait]
    }
}

impl FromStr for Weights {
    type Err = String;

    /// `deliver=8,drop=1,...`; omitted actions get weight 0.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = Weights { deliver: 0, drop: 0, duplicate: 0, replay: 0, tamper: 0, inject: 0, wait: 0 };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected name=weight, got `{part}`"))?;
            let v: u32 = v.trim().parse().map_err(|_| format!("bad weight `{v}`"))?;
            let slot = match k.trim() {
                "deliver" => &mut w.deliver,
                "drop" => &mut w.drop,
                "duplicate" => &mut w.duplicate,
                "replay" => &mut w.replay,
                "tamper" => &mut w.tamper,
                "inject" => &mut w.inject,
                "wait" => &mut w.wait,
                other => return Err(format!("unknown action `{other}`")),
            };
            *slot = v;
        }
        if w.as_array().iter().all(|x| *x == 0) {
            return Err("at least one weight must be positive".into());
        }
        Ok(w)
    }
}

impl fmt::Display for Weights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "deliver={},drop={},duplicate={},replay={},tamper={},inject={},wait={}",
            self.deliver, self.drop, self.duplicate, self.replay, self.tamper, self.inject, self.wait
        )
    }
}

/// Seeded random adversary. After `budget` decisions it turns passive so
/// every run terminates.
#[derive(Debug, Clone)]
pub struct RandomStrategy {
    weights: Weights,
    budget: u32,
    used: u32,
}

impl RandomStrategy {
    pub fn new(weights: Weights, budget: u32) -> Self {
        Self { weights, budget, used: 0 }
    }

    fn random_forgery(&mut self, ctx: &mut AdversaryCtx<'_>) -> Option<Decision> {
        let dir = ctx.directory;
        match ctx.rng.gen_range(0..4) {
            0 if !dir.session_keys.is_empty() => {
                let (_, k) = dir.session_keys[ctx.rng.gen_range(0..dir.session_keys.len())].clone();
                Some(ctx.forge_registration(&k, None, None))
            }
            1 if !dir.session_keys.is_empty() => {
                // Recombine: someone else's device key and an observed
                // ciphertext in the token slot.
                let (_, k) = dir.session_keys[ctx.rng.gen_range(0..dir.session_keys.len())].clone();
                let victim = (!dir.device_keys.is_empty())
                    .then(|| dir.device_keys[ctx.rng.gen_range(0..dir.device_keys.len())].1.clone());
                let observed: Vec<HybridCiphertext> = ctx
                    .public
                    .observed()
                    .filter_map(|f| Message::decode(&f.bytes).ok()?.hybrid_ciphertext().cloned())
                    .collect();
                let ct = (!observed.is_empty()).then(|| observed[ctx.rng.gen_range(0..observed.len())].clone());
                Some(ctx.forge_registration(&k, victim, ct))
            }
            2 if !dir.device_keys.is_empty() => {
                let (i, k) = dir.device_keys[ctx.rng.gen_range(0..dir.device_keys.len())].clone();
                Some(ctx.forge_activation(i, &k))
            }
            3 if !dir.server_device_keys.is_empty() => {
                let k = dir.server_device_keys[ctx.rng.gen_range(0..dir.server_device_keys.len())].clone();
                Some(ctx.forge_report(&k))
            }
            _ => None,
        }
    }

    fn random_endpoint(ctx: &mut AdversaryCtx<'_>) -> Actor {
        let n = ctx.directory.devices;
        match ctx.rng.gen_range(0..=n) {
            0 => Actor::Server,
            i => Actor::Device(i - 1),
        }
    }
}

impl Strategy for RandomStrategy {
    fn decide(&mut self, ctx: &mut AdversaryCtx<'_>) -> Option<Decision> {
        if self.used >= self.budget {
            return Passive.decide(ctx);
        }
        self.used += 1;
        let pending: Vec<u64> = ctx.public.pending().map(|f| f.index).collect();
        let observed = ctx.public.observed_count() as u64;
        let mut w = self.weights.as_array();
        if pending.is_empty() {
            // Only replay, inject and wait make sense; the frame-level
            // weights become "stop".
            let stop: u32 = w[0] + w[1] + w[2] + w[4];
            w = [stop, 0, 0, w[3], 0, w[5], w[6]];
            if observed == 0 {
                w[3] = 0;
            }
        }
        let dist = WeightedIndex::new(w).ok()?;
        let pick = |rng: &mut ChaCha20Rng| pending[rng.gen_range(0..pending.len())];
        match dist.sample(&mut *ctx.rng) {
            0 if pending.is_empty() => None,
            0 => Some(Decision::Act(AdversaryAction::Deliver(pick(ctx.rng)))),
            1 => Some(Decision::Act(AdversaryAction::Drop(pick(ctx.rng)))),
            2 => Some(Decision::Act(AdversaryAction::Duplicate(pick(ctx.rng)))),
            3 => {
                let index = ctx.rng.gen_range(0..observed);
                let to = ctx.rng.gen_bool(0.3).then(|| Self::random_endpoint(ctx));
                Some(Decision::Act(AdversaryAction::Replay { index, to }))
            }
            4 => {
                let index = pick(ctx.rng);
                let bit = ctx.rng.gen_range(0..usize::MAX / 2);
                Some(Decision::Act(AdversaryAction::Tamper { index, bit }))
            }
            5 => self.random_forgery(ctx).or(Some(Decision::Wait(1))),
            _ => Some(Decision::Wait(ctx.rng.gen_range(1..=40))),
        }
    }
}

/// One option at an exhaustive-search branch point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Choice {
    Act(AdversaryAction),
    Stop,
}

/// Options available to the bounded-exhaustive adversary: for the oldest
/// pending frame deliver, drop, duplicate, or tamper; with nothing pending,
/// stop or replay any observed frame (at most `max_replays` times).
pub(crate) fn exhaustive_options(public: &PublicChannel, replays_used: u32, max_replays: u32) -> Vec<Choice> {
    if let Some(f) = public.pending().next() {
        let i = f.index;
        return vec![
            Choice::Act(AdversaryAction::Deliver(i)),
            Choice::Act(AdversaryAction::Drop(i)),
            Choice::Act(AdversaryAction::Duplicate(i)),
            Choice::Act(AdversaryAction::Tamper { index: i, bit: f.bytes.len() * 4 }),
        ];
    }
    let mut v = vec![Choice::Stop];
    if replays_used < max_replays {
        v.extend(public.observed().map(|f| Choice::Act(AdversaryAction::Replay { index: f.index, to: None })));
    }
    v
}

/// Follows a fixed prefix of choices, then always takes option 0, recording
/// the branching factor at every point.
#[derive(Debug, Clone)]
pub(crate) struct Enumerator {
    pub prefix: Vec<usize>,
    pub taken: Vec<(usize, usize)>,
    pub max_replays: u32,
    pub max_messages: usize,
    replays: u32,
}

impl Enumerator {
    pub fn new(prefix: Vec<usize>, max_replays: u32, max_messages: usize) -> Self {
        Self { prefix, taken: Vec::new(), max_replays, max_messages, replays: 0 }
    }
}

impl Strategy for Enumerator {
    fn decide(&mut self, ctx: &mut AdversaryCtx<'_>) -> Option<Decision> {
        let mut options = exhaustive_options(ctx.public, self.replays, self.max_replays);
        if ctx.public.observed_count() > self.max_messages {
            // Past the message bound: no more branching, just drain.
            options.truncate(1);
        }
        let k = self.taken.len();
        let choice = self.prefix.get(k).copied().unwrap_or(0);
        self.taken.push((choice, options.len()));
        match options.swap_remove(choice) {
            Choice::Stop => None,
            Choice::Act(a) => {
                if matches!(a, AdversaryAction::Replay { .. }) {
                    self.replays += 1;
                }
                Some(Decision::Act(a))
            }
        }
    }
}
