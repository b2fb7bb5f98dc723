//! Simulation harness: honest roles driven over a secure channel per pair and
//! one attacker-controlled public channel.
//!
//! A [`World`] runs honest steps eagerly and lets a [`Strategy`] decide what
//! happens to every public frame. Everything is seeded, so a run is a pure
//! function of (scenario, config, seed, strategy).

mod campaign;
mod lemmas;
mod script;
mod strategy;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{
    Actor, AdversaryAction, AtomKind, Delivery, EventKind, PublicChannel, SecureChannel, Side, SymbolTable, Term, Trace,
};
use crate::crypto::{gen_link_key, PseudoUuid};
use crate::ledger::{Ledger, LedgerConfig, Member, OrgRole};
use crate::risk::RiskEngine;
use crate::roles::{
    activation_term, AuthPhase, Authenticator, Device, DevicePhase, Env, Outbound, ProtocolConfig, ProtocolError,
    Server,
};

pub use campaign::{explore, run_campaign, run_one, CampaignConfig, CampaignSummary, ExploreSummary, RunRecord};
pub use lemmas::{check_authentication, check_keypair_confidentiality, check_token_integrity, LemmaVerdict, Verdicts};
pub use script::{
    builtin_script, builtin_scripts, run_attack, AttackReport, AttackScript, Expectation, ScriptAction, ScriptError,
    ScriptStep, Trigger,
};
pub use strategy::{AdversaryCtx, Attacker, Decision, Directory, Passive, RandomStrategy, Strategy, Weights};

/// Default protocol start: a TOTP step boundary.
pub const DEFAULT_START: u64 = 1_700_000_010;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSpec {
    pub metric: String,
    pub value: f64,
    pub unit: String,
}

/// What the honest parties try to do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    /// Authenticator/device pairs.
    pub pairs: u32,
    pub start: u64,
    /// Seconds between token issue and provisioning.
    pub provision_delay: u64,
    /// Readings each device sends once active.
    pub reports: Vec<ReportSpec>,
    /// Revoke every device after its reports.
    pub revoke: bool,
    pub manufacturer: String,
    pub max_steps: u32,
    /// Give each device a link key its authenticator does not hold.
    pub mismatched_link_keys: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            pairs: 1,
            start: DEFAULT_START,
            provision_delay: 0,
            reports: vec![],
            revoke: false,
            manufacturer: "acme".into(),
            max_steps: 10_000,
            mismatched_link_keys: false,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if self.pairs == 0 {
            return bad("pairs must be at least 1");
        }
        if self.pairs > 1024 {
            return bad("pairs must be at most 1024");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if self.manufacturer.is_empty() {
            return bad("manufacturer must not be empty");
        }
        if let Some(r) = self.reports.iter().find(|r| !r.value.is_finite() || r.metric.is_empty()) {
            return Err(ScenarioError::Invalid(format!("bad report {r:?}")));
        }
        Ok(())
    }
}

/// Honest progress of one pair.
#[derive(Debug, Clone, Default)]
struct Plan {
    logged_in: bool,
    token_at: Option<u64>,
    provisioned: bool,
    registrations: u32,
    reports_sent: usize,
    revoked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub steps: u32,
    /// The step bound was hit before the run settled.
    pub exhausted: bool,
    /// Adversary actions the channel refused (unknown index, underivable
    /// injection).
    pub adversary_errors: u32,
}

pub struct World {
    scenario: Scenario,
    rng: ChaCha20Rng,
    adversary_rng: ChaCha20Rng,
    trace: Trace,
    symbols: SymbolTable,
    now: u64,
    server: Server,
    auths: Vec<Authenticator>,
    devices: Vec<Device>,
    secure: Vec<SecureChannel>,
    public: PublicChannel,
    plans: Vec<Plan>,
    rejections: Vec<(Actor, ProtocolError)>,
    attacker: Attacker,
    adversary_errors: u32,
}

macro_rules! env {
    ($w:expr) => {
        &mut Env { now: $w.now, rng: &mut $w.rng, trace: &mut $w.trace, symbols: &mut $w.symbols }
    };
}

impl World {
    pub fn new(scenario: Scenario, config: ProtocolConfig, seed: u64) -> Result<Self, ScenarioError> {
        Self::with_ledger(scenario, config, seed, LedgerConfig::default(), RiskEngine::default_rules())
    }

    /// Like [`World::new`] with an explicit ledger configuration and risk
    /// rules.
    pub fn with_ledger(
        scenario: Scenario,
        config: ProtocolConfig,
        seed: u64,
        ledger_config: LedgerConfig,
        risk_rules: RiskEngine,
    ) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let adversary_rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_adc0_ffee_0001);
        let member = Member::generate("provider", OrgRole::Server, &mut rng);
        let risk = Member::generate("risk-engine", OrgRole::RiskEngine, &mut rng);
        let ledger = Ledger::new(ledger_config)
            .with_risk_engine(risk_rules, risk)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        ledger.register(member.identity().clone()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let mut w = World {
            now: scenario.start,
            rng,
            adversary_rng,
            trace: Trace::new(),
            symbols: SymbolTable::new(),
            server: Server::new(config.clone(), Arc::new(ledger), member),
            auths: vec![],
            devices: vec![],
            secure: vec![],
            public: PublicChannel::new(),
            plans: vec![Plan::default(); scenario.pairs as usize],
            rejections: vec![],
            attacker: Attacker::default(),
            adversary_errors: 0,
            scenario,
        };
        for i in 0..w.scenario.pairs {
            let key = gen_link_key(&mut w.rng);
            let device_key = if w.scenario.mismatched_link_keys { gen_link_key(&mut w.rng) } else { key.clone() };
            w.auths.push(Authenticator::new(i, key, config.clone()));
            let manufacturer = w.scenario.manufacturer.clone();
            let d = Device::new(i, device_key, manufacturer, config.clone(), env!(w));
            w.devices.push(d);
            w.secure.push(SecureChannel::new());
        }
        w.public.learn(Term::text(&config.api_address));
        Ok(w)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        self.server.ledger()
    }

    pub fn authenticators(&self) -> &[Authenticator] {
        &self.auths
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn public(&self) -> &PublicChannel {
        &self.public
    }

    pub fn attacker(&self) -> &Attacker {
        &self.attacker
    }

    /// Every rejection so far, with the role that raised it.
    pub fn rejections(&self) -> &[(Actor, ProtocolError)] {
        &self.rejections
    }

    /// Rejection codes raised by the server, in order.
    pub fn server_rejections(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.rejections.iter().filter(|(a, _)| *a == Actor::Server).map(|(_, e)| e.code())
    }

    pub fn directory(&self) -> Directory {
        Directory {
            session_keys: (0..self.scenario.pairs)
                .filter_map(|i| Some((i, self.server.session_key(i)?.clone())))
                .collect(),
            device_keys: self.devices.iter().enumerate().map(|(i, d)| (i as u32, d.public_key().clone())).collect(),
            server_device_keys: self.server.registry().values().map(|e| e.server_keys.public().clone()).collect(),
            devices: self.scenario.pairs,
        }
    }

    /// Terms the attacker must never derive: device and per-device server
    /// secret keys, long-lived tokens, and link keys.
    pub fn secrets(&self) -> Vec<Term> {
        let mut s: Vec<Term> = self.devices.iter().map(Device::secret_term).collect();
        for e in self.server.registry().values() {
            s.push(Term::secret_key(e.server_keys.secret()));
            s.push(Term::atom(AtomKind::LongLivedToken, e.long_lived_token.0));
            s.push(activation_term(&e.activation()));
        }
        s.extend(self.auths.iter().map(|a| Term::link_key(a.link_key())));
        s
    }

    pub fn verdicts(&self) -> Verdicts {
        Verdicts {
            authentication: check_authentication(&self.trace),
            token_integrity: check_token_integrity(&self.trace),
            confidentiality: check_keypair_confidentiality(self.public.knowledge(), &self.secrets()),
        }
    }

    /// Device ids that reached `RegistrationSuccess` at the server.
    pub fn registered_ids(&self) -> Vec<PseudoUuid> {
        self.trace
            .events()
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::RegistrationSuccess { device_id, .. } => Some(*device_id),
                _ => None,
            })
            .collect()
    }

    /// Has device `pair` send one extra reading outside the scenario plan,
    /// e.g. after it was revoked. The frame goes onto the public channel.
    pub fn send_report(&mut self, pair: u32, report: &ReportSpec) -> Result<(), ProtocolError> {
        let i = pair as usize;
        let d = self.devices.get_mut(i).ok_or_else(|| ProtocolError::Malformed(format!("no device {pair}")))?;
        let out = d.report(
            &mut Env { now: self.now, rng: &mut self.rng, trace: &mut self.trace, symbols: &mut self.symbols },
            &report.metric,
            report.value,
            &report.unit,
        )?;
        self.route(out);
        Ok(())
    }

    fn route(&mut self, out: Vec<Outbound>) {
        for o in out {
            match o {
                Outbound::Secure { authenticator, to_server, message } => {
                    let side = if to_server { Side::Server } else { Side::Authenticator };
                    if let Err(e) = self.secure[authenticator as usize].secure_send(side, &message) {
                        self.rejections
                            .push((Actor::Authenticator(authenticator), ProtocolError::Malformed(e.to_string())));
                    }
                }
                Outbound::Public { from, to, message, term } => {
                    // The public channel is never closed here.
                    let _ = self.public.public_send(from, to, message.encode(), term);
                }
            }
        }
    }

    fn settle_result(&mut self, actor: Actor, r: Result<Vec<Outbound>, ProtocolError>) -> bool {
        match r {
            Ok(out) => {
                self.route(out);
                true
            }
            Err(e) => {
                self.rejections.push((actor, e));
                false
            }
        }
    }

    /// Delivers everything queued on the secure channels. Returns whether
    /// anything moved.
    fn pump_secure(&mut self) -> bool {
        let mut moved = false;
        loop {
            let mut any = false;
            for i in 0..self.secure.len() {
                let idx = i as u32;
                while let Some(m) = self.take_secure(i, Side::Server) {
                    any = true;
                    let r = self.server.on_secure(env!(self), idx, m);
                    self.settle_result(Actor::Server, r);
                }
                while let Some(m) = self.take_secure(i, Side::Authenticator) {
                    any = true;
                    let r = self.auths[i].on_secure(env!(self), m);
                    self.settle_result(Actor::Authenticator(idx), r);
                }
            }
            if !any {
                return moved;
            }
            moved = true;
        }
    }

    fn take_secure(&mut self, i: usize, side: Side) -> Option<crate::wire::Message> {
        match self.secure[i].secure_recv(side) {
            Ok(m) => m,
            Err(e) => {
                let actor = if side == Side::Server { Actor::Server } else { Actor::Authenticator(i as u32) };
                self.rejections.push((actor, ProtocolError::Malformed(e.to_string())));
                None
            }
        }
    }

    /// One round of honest steps. Returns whether any was taken.
    fn honest_round(&mut self) -> bool {
        let mut progressed = false;
        for i in 0..self.auths.len() {
            let idx = i as u32;
            let actor = Actor::Authenticator(idx);
            if !self.plans[i].logged_in && self.auths[i].phase() == AuthPhase::Idle {
                self.plans[i].logged_in = true;
                let r = self.auths[i].login(env!(self));
                progressed |= self.settle_result(actor, r);
                self.pump_secure();
            }
            if self.plans[i].token_at.is_none() && self.auths[i].phase() == AuthPhase::SessionEstablished {
                self.plans[i].token_at = Some(self.now);
                progressed = true;
                let r = self.auths[i].request_token(&*env!(self)).map(|_| vec![]);
                if self.settle_result(actor, r) {
                    let r = self.server.issue_transient_token(env!(self), idx);
                    self.settle_result(Actor::Server, r);
                }
                self.pump_secure();
            }
            if let Some(at) = self.plans[i].token_at {
                if !self.plans[i].provisioned
                    && self.auths[i].has_token()
                    && self.now >= at + self.scenario.provision_delay
                {
                    self.plans[i].provisioned = true;
                    progressed = true;
                    let to = self.devices[i].actor();
                    let r = self.auths[i].provision_device(env!(self), to);
                    self.settle_result(actor, r);
                }
            }
            let dactor = Actor::Device(idx);
            if self.devices[i].phase() == DevicePhase::Provisioned
                && self.plans[i].registrations < self.devices[i].provisions()
            {
                self.plans[i].registrations += 1;
                progressed = true;
                let r = self.devices[i].build_registration_request(env!(self));
                self.settle_result(dactor, r);
            }
            if self.devices[i].phase() == DevicePhase::Active
                && self.plans[i].reports_sent < self.scenario.reports.len()
            {
                let spec = self.scenario.reports[self.plans[i].reports_sent].clone();
                self.plans[i].reports_sent += 1;
                progressed = true;
                let r = self.devices[i].report(env!(self), &spec.metric, spec.value, &spec.unit);
                self.settle_result(dactor, r);
            }
            let id = self.devices[i].device_id();
            if self.scenario.revoke
                && !self.plans[i].revoked
                && self.plans[i].reports_sent == self.scenario.reports.len()
                && self.auths[i].connected().contains(&id)
                && self.public.pending().all(|f| f.from != dactor)
            {
                self.plans[i].revoked = true;
                progressed = true;
                let r = self.auths[i].revoke(env!(self), id);
                self.settle_result(actor, r);
                self.pump_secure();
            }
        }
        progressed | self.pump_secure()
    }

    fn settle(&mut self) {
        while self.honest_round() {}
    }

    /// Earliest future time at which an honest step becomes possible.
    fn next_honest_time(&self) -> Option<u64> {
        self.plans
            .iter()
            .zip(&self.auths)
            .filter(|(p, a)| !p.provisioned && a.has_token())
            .filter_map(|(p, _)| p.token_at.map(|t| t + self.scenario.provision_delay))
            .filter(|t| *t > self.now)
            .min()
    }

    fn sync_knowledge(&mut self) -> Directory {
        let dir = self.directory();
        let keys: Vec<Term> = dir.all_keys().map(Term::public_key).collect();
        for k in keys {
            self.public.learn(k);
        }
        for a in &self.auths {
            if let Some(k) = a.public_key() {
                self.public.learn(Term::public_key(k));
            }
        }
        dir
    }

    /// Applies one adversary action and hands the resulting frames to their
    /// receivers.
    pub fn apply(&mut self, action: AdversaryAction) {
        self.trace.record(
            Actor::Adversary,
            EventKind::AdversaryAction { index: action.index(), action: action.name().into() },
        );
        match self.public.public_deliver(action) {
            Ok(ds) => {
                for d in ds {
                    self.deliver(d);
                }
            }
            Err(_) => self.adversary_errors += 1,
        }
    }

    fn deliver(&mut self, d: Delivery) {
        let r = match d.to {
            Actor::Server => self.server.on_public(env!(self), d.from, &d.bytes),
            Actor::Device(i) if (i as usize) < self.devices.len() => {
                self.devices[i as usize].on_public(env!(self), &d.bytes)
            }
            _ => return,
        };
        self.settle_result(d.to, r);
        self.pump_secure();
    }

    /// Retries registration on every waiting device that has retries left.
    fn retry_devices(&mut self) -> bool {
        let mut any = false;
        for i in 0..self.devices.len() {
            let out = self.devices[i].retry_registration(env!(self));
            any |= !out.is_empty();
            self.route(out);
        }
        any
    }

    /// Runs until the strategy and the honest parties are both done, or the
    /// step bound is hit.
    pub fn run(&mut self, strategy: &mut dyn Strategy) -> RunOutcome {
        let mut steps = 0;
        while steps < self.scenario.max_steps {
            steps += 1;
            self.settle();
            let directory = self.sync_knowledge();
            let kem = self.server_kem();
            let mut ctx = AdversaryCtx {
                public: &mut self.public,
                symbols: &mut self.symbols,
                rng: &mut self.adversary_rng,
                now: self.now,
                kem,
                directory: &directory,
                attacker: &mut self.attacker,
            };
            match strategy.decide(&mut ctx) {
                Some(Decision::Act(a)) => self.apply(a),
                Some(Decision::Wait(s)) => self.now += s.max(1),
                None => {
                    if let Some(t) = self.next_honest_time() {
                        self.now = t;
                    } else if !self.retry_devices() {
                        return RunOutcome { steps, exhausted: false, adversary_errors: self.adversary_errors };
                    }
                }
            }
        }
        RunOutcome { steps, exhausted: true, adversary_errors: self.adversary_errors }
    }

    fn server_kem(&self) -> crate::crypto::KemAlgorithm {
        self.devices.first().map_or_else(Default::default, |d| d.public_key().algorithm())
    }
}
