//! Scripted attacks: a JSON list of (trigger, action) steps applied to
//! matching public frames, plus the outcome the protocol must produce.
//!
//! ```json
//! { "name": "replay-device-request",
//!   "steps": [ { "on": { "kind": "RegistrationRequest", "nth": 0 },
//!                "action": { "type": "replay", "delay": 0 } } ],
//!   "expect": { "type": "rejected", "code": "token-consumed" } }
//! ```
//!
//! Frames no step matches are delivered unchanged.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{Actor, AdversaryAction};
use crate::roles::{DevicePhase, ProtocolConfig};
use crate::wire::Message;

use super::strategy::{AdversaryCtx, Decision, Strategy};
use super::{RunOutcome, Scenario, ScenarioError, Verdicts, World};

const BUILTIN: &[(&str, &str)] = &[
    ("replay-device-request", include_str!("scripts/replay-device-request.json")),
    ("replay-stale-token", include_str!("scripts/replay-stale-token.json")),
    ("tamper-ciphertext-bit", include_str!("scripts/tamper-ciphertext-bit.json")),
    ("token-swap-across-devices", include_str!("scripts/token-swap-across-devices.json")),
    ("inject-forged-registration", include_str!("scripts/inject-forged-registration.json")),
    ("drop-activation", include_str!("scripts/drop-activation.json")),
];

const MESSAGE_KINDS: &[&str] = &[
    "SessionHello",
    "NonceChallenge",
    "NonceResponse",
    "TokenDelivery",
    "DeviceProvision",
    "RegistrationRequest",
    "ActivationResponse",
    "ConnectedNotice",
    "DataReport",
    "RevocationRequest",
];

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("script is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid script: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no built-in attack named `{0}`")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Trigger {
    /// The frame with this public-channel index.
    Index(u64),
    /// The `nth` (from zero) frame of this message kind.
    Kind {
        kind: String,
        #[serde(default)]
        nth: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScriptAction {
    Deliver,
    Drop,
    Duplicate,
    /// Deliver, then send the same frame again `delay` seconds later.
    Replay {
        #[serde(default)]
        delay: u64,
    },
    /// Keep the frame for `secs` seconds, then deliver it.
    Hold {
        secs: u64,
    },
    Tamper {
        #[serde(default)]
        bit: usize,
    },
    /// Inject a registration with a guessed token and an attacker key to the
    /// session of `authenticator`, then deliver the frame.
    ForgeRegistration {
        #[serde(default)]
        authenticator: u32,
    },
    /// Inject a registration carrying device `victim`'s key and the observed
    /// frame's ciphertext in the token slot, signed by the attacker, then
    /// deliver the frame.
    SwapToken {
        victim: u32,
        #[serde(default)]
        authenticator: u32,
    },
    /// Deliver the frame to device `to_device` instead.
    Redirect {
        to_device: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub on: Trigger,
    pub action: ScriptAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Expectation {
    /// The server rejects something with this error code and no forged or
    /// duplicate registration succeeds.
    Rejected { code: String },
    /// No device becomes active.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub scenario: Scenario,
    pub steps: Vec<ScriptStep>,
    pub expect: Expectation,
}

impl AttackScript {
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScriptError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        self.scenario.validate()?;
        let pairs = self.scenario.pairs;
        let invalid = |m: String| Err(ScriptError::Invalid(m));
        if self.steps.is_empty() {
            return invalid("a script needs at least one step".into());
        }
        for s in &self.steps {
            if let Trigger::Kind { kind, .. } = &s.on {
                if !MESSAGE_KINDS.contains(&kind.as_str()) {
                    return invalid(format!("unknown message kind `{kind}`"));
                }
            }
            match &s.action {
                ScriptAction::SwapToken { victim, authenticator } if *victim >= pairs || *authenticator >= pairs => {
                    return invalid(format!("swap-token refers to a pair outside 0..{pairs}"));
                }
                ScriptAction::ForgeRegistration { authenticator } if *authenticator >= pairs => {
                    return invalid(format!("forge-registration refers to a pair outside 0..{pairs}"));
                }
                ScriptAction::Redirect { to_device } if *to_device >= pairs => {
                    return invalid(format!("redirect target {to_device} is outside 0..{pairs}"));
                }
                _ => {}
            }
        }
        if let Expectation::Rejected { code } = &self.expect {
            if code.is_empty() {
                return invalid("expected rejection code is empty".into());
            }
        }
        Ok(())
    }
}

pub fn builtin_scripts() -> Vec<AttackScript> {
    BUILTIN.iter().map(|(_, json)| AttackScript::from_json(json).expect("built-in scripts are valid")).collect()
}

pub fn builtin_script(name: &str) -> Result<AttackScript, ScriptError> {
    BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| AttackScript::from_json(json).expect("built-in scripts are valid"))
        .ok_or_else(|| ScriptError::UnknownBuiltin(name.into()))
}

pub(crate) struct ScriptRunner {
    steps: Vec<ScriptStep>,
    fired: Vec<bool>,
    labels: BTreeMap<u64, (String, u32)>,
    counts: BTreeMap<String, u32>,
    held: BTreeMap<u64, u64>,
    scheduled: Vec<(u64, AdversaryAction)>,
    queue: VecDeque<Decision>,
}

impl ScriptRunner {
    pub(crate) fn new(steps: Vec<ScriptStep>) -> Self {
        let fired = vec![false; steps.len()];
        Self {
            steps,
            fired,
            labels: BTreeMap::new(),
            counts: BTreeMap::new(),
            held: BTreeMap::new(),
            scheduled: vec![],
            queue: VecDeque::new(),
        }
    }

    fn label_new_frames(&mut self, ctx: &AdversaryCtx<'_>) {
        for f in ctx.public.observed() {
            if self.labels.contains_key(&f.index) {
                continue;
            }
            let kind = Message::decode(&f.bytes).map_or("Unknown", |m| m.kind()).to_string();
            let n = self.counts.entry(kind.clone()).or_default();
            self.labels.insert(f.index, (kind, *n));
            *n += 1;
        }
    }

    fn matching_step(&self, index: u64) -> Option<usize> {
        let label = self.labels.get(&index)?;
        (0..self.steps.len()).find(|&s| {
            !self.fired[s]
                && match &self.steps[s].on {
                    Trigger::Index(i) => *i == index,
                    Trigger::Kind { kind, nth } => label.0 == *kind && label.1 == *nth,
                }
        })
    }

    fn fire(&mut self, ctx: &mut AdversaryCtx<'_>, step: usize, index: u64) {
        use AdversaryAction as A;
        self.fired[step] = true;
        let session = |ctx: &AdversaryCtx<'_>, a: u32| {
            ctx.directory.session_keys.iter().find(|(i, _)| *i == a).map(|(_, k)| k.clone())
        };
        let act = |a: AdversaryAction| Decision::Act(a);
        match self.steps[step].action.clone() {
            ScriptAction::Deliver => self.queue.push_back(act(A::Deliver(index))),
            ScriptAction::Drop => self.queue.push_back(act(A::Drop(index))),
            ScriptAction::Duplicate => self.queue.push_back(act(A::Duplicate(index))),
            ScriptAction::Replay { delay } => {
                self.queue.push_back(act(A::Deliver(index)));
                let replay = A::Replay { index, to: None };
                if delay == 0 {
                    self.queue.push_back(act(replay));
                } else {
                    self.scheduled.push((ctx.now + delay, replay));
                }
            }
            ScriptAction::Hold { secs } => {
                self.held.insert(index, ctx.now + secs);
            }
            ScriptAction::Tamper { bit } => self.queue.push_back(act(A::Tamper { index, bit })),
            ScriptAction::ForgeRegistration { authenticator } => {
                if let Some(k) = session(ctx, authenticator) {
                    let forged = ctx.forge_registration(&k, None, None);
                    self.queue.push_back(forged);
                }
                self.queue.push_back(act(A::Deliver(index)));
            }
            ScriptAction::SwapToken { victim, authenticator } => {
                let frame_ct = ctx
                    .public
                    .observed()
                    .find(|f| f.index == index)
                    .and_then(|f| Message::decode(&f.bytes).ok()?.hybrid_ciphertext().cloned());
                let victim_key = ctx.directory.device_keys.iter().find(|(i, _)| *i == victim).map(|(_, k)| k.clone());
                if let (Some(k), Some(ct), Some(vk)) = (session(ctx, authenticator), frame_ct, victim_key) {
                    let forged = ctx.forge_registration(&k, Some(vk), Some(ct));
                    self.queue.push_back(forged);
                }
                self.queue.push_back(act(A::Deliver(index)));
            }
            ScriptAction::Redirect { to_device } => {
                self.queue.push_back(act(A::Replay { index, to: Some(Actor::Device(to_device)) }));
                self.queue.push_back(act(A::Drop(index)));
            }
        }
    }
}

impl Strategy for ScriptRunner {
    fn decide(&mut self, ctx: &mut AdversaryCtx<'_>) -> Option<Decision> {
        self.label_new_frames(ctx);
        loop {
            if let Some(d) = self.queue.pop_front() {
                return Some(d);
            }
            if let Some(pos) = self.scheduled.iter().position(|(at, _)| *at <= ctx.now) {
                return Some(Decision::Act(self.scheduled.remove(pos).1));
            }
            let pending: Vec<u64> = ctx.public.pending().map(|f| f.index).collect();
            if let Some((&i, _)) = self.held.iter().find(|(i, at)| **at <= ctx.now && pending.contains(i)) {
                self.held.remove(&i);
                return Some(Decision::Act(AdversaryAction::Deliver(i)));
            }
            self.held.retain(|i, _| pending.contains(i));
            let Some(&index) = pending.iter().find(|i| !self.held.contains_key(i)) else {
                let next = self.held.values().chain(self.scheduled.iter().map(|(at, _)| at)).min()?;
                return Some(Decision::Wait(next.saturating_sub(ctx.now).max(1)));
            };
            match self.matching_step(index) {
                Some(step) => self.fire(ctx, step, index),
                None => return Some(Decision::Act(AdversaryAction::Deliver(index))),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub name: String,
    pub expect: Expectation,
    pub defeated: bool,
    /// Why the attack counts as successful, when it does.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failure: Option<String>,
    pub server_rejections: Vec<String>,
    pub registrations: usize,
    pub forged_registrations: usize,
    pub active_devices: usize,
    pub verdicts: Verdicts,
    pub outcome: RunOutcome,
    pub trace_digest: String,
}

/// Runs `script` against honest parties and judges the outcome.
pub fn run_attack(script: &AttackScript, config: ProtocolConfig, seed: u64) -> Result<AttackReport, ScriptError> {
    script.validate()?;
    let mut world = World::new(script.scenario.clone(), config, seed)?;
    let outcome = world.run(&mut ScriptRunner::new(script.steps.clone()));
    let server_rejections: Vec<String> = world.server_rejections().map(String::from).collect();
    let registered = world.registered_ids();
    let forged = registered.iter().filter(|id| world.attacker().forged_ids.contains(id)).count();
    let distinct: BTreeSet<_> = registered.iter().collect();
    let active = world.devices().iter().filter(|d| d.phase() == DevicePhase::Active).count();
    let verdicts = world.verdicts();

    let failure = if !verdicts.all_hold() {
        Some(format!("lemma violated: {verdicts:?}"))
    } else if forged > 0 {
        Some(format!("{forged} attacker-made device id(s) registered"))
    } else if distinct.len() != registered.len() {
        Some("a device registered more than once".into())
    } else if outcome.exhausted {
        Some("run did not settle within the step bound".into())
    } else {
        match &script.expect {
            Expectation::Rejected { code } if !server_rejections.iter().any(|c| c == code) => {
                Some(format!("server never rejected with `{code}` (saw {server_rejections:?})"))
            }
            Expectation::Stalled if active > 0 => Some(format!("{active} device(s) became active")),
            _ => None,
        }
    };
    Ok(AttackReport {
        name: script.name.clone(),
        expect: script.expect.clone(),
        defeated: failure.is_none(),
        failure,
        server_rejections,
        registrations: registered.len(),
        forged_registrations: forged,
        active_devices: active,
        verdicts,
        outcome,
        trace_digest: world.trace().digest().to_hex(),
    })
}
