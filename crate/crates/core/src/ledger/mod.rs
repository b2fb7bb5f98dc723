//! In-process consortium ledger: three channels, each its own hash chain,
//! with chaincode validation and access control at submission, a block
//! cutter, and commit-ordered event subscriptions.
//!
//! Submissions are validated immediately (membership, signature, payload,
//! write policy) and queued per channel. A block is cut when a channel has
//! `max_block_txs` pending or its oldest pending transaction has waited
//! `block_interval_us`. Committing a Data block runs the risk engine and
//! commits any resulting alerts to Risk Management right away, so alert
//! order follows data order.

mod block;
mod policy;
mod snapshot;
mod types;

use std::collections::{HashMap, VecDeque};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use crate::crypto::PseudoUuid;
use crate::risk::RiskEngine;

pub use block::{verify_blocks, verify_raw_blocks, Block, ChainError, ChainFault};
pub use policy::{Access, AccessMatrix, ReadScope};
pub use snapshot::{encode_snapshot, parse_snapshot, Snapshot, SnapshotError};
pub use types::{
    ChannelId, DataEntry, DeviceRecord, DeviceStatus, EntryRef, LedgerTransaction, Member, OrgIdentity, OrgRole,
    Payload, RiskAlert,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("{role} may not {op} the {channel} channel")]
    PolicyDenied { role: OrgRole, channel: ChannelId, op: &'static str },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
    #[error("organization `{0}` is already registered")]
    DuplicateIdentity(String),
    #[error("transaction signature does not verify")]
    BadSignature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerConfig {
    pub max_block_txs: usize,
    pub block_interval_us: u64,
    pub access: AccessMatrix,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        Self { max_block_txs: 50, block_interval_us: 100_000, access: AccessMatrix::default() }
    }
}

/// Where a transaction ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Receipt {
    pub channel: ChannelId,
    pub height: u64,
    pub index: u32,
}

/// A block that was just committed. `tickets` are the submission tickets of
/// its transactions, in block order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitInfo {
    pub channel: ChannelId,
    pub height: u64,
    pub tickets: Vec<u64>,
    pub committed_at: u64,
}

/// A committed payload and its location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Committed {
    pub entry: EntryRef,
    pub tx: LedgerTransaction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub channel: ChannelId,
    pub height: u64,
    pub index: u32,
    pub tx: LedgerTransaction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventFilter {
    All,
    Device(PseudoUuid),
    /// Risk alerts that list the subscriber's role as a target.
    TargetedAtMe,
}

/// Receiving end of a subscription. Events arrive once each, in commit order.
#[derive(Debug)]
pub struct Subscription {
    rx: Receiver<LedgerEvent>,
}

impl Subscription {
    /// All events delivered so far and not yet taken.
    pub fn drain(&self) -> Vec<LedgerEvent> {
        self.rx.try_iter().collect()
    }
}

#[derive(Debug)]
struct Subscriber {
    identity: OrgIdentity,
    channel: ChannelId,
    filter: EventFilter,
    scope: ReadScope,
    tx: Sender<LedgerEvent>,
}

#[derive(Debug)]
struct Pending {
    ticket: u64,
    tx: LedgerTransaction,
    submitted_at: u64,
}

#[derive(Debug)]
struct State {
    chains: [Vec<Block>; 3],
    pending: [VecDeque<Pending>; 3],
    next_ticket: u64,
    /// Latest status per device, including pending records.
    device_status: HashMap<PseudoUuid, DeviceStatus>,
    /// Unit seen for each device metric stream.
    units: HashMap<(PseudoUuid, String), String>,
}

#[derive(Debug)]
pub struct Ledger {
    config: LedgerConfig,
    msp: RwLock<HashMap<String, OrgIdentity>>,
    state: RwLock<State>,
    subscribers: Mutex<Vec<Subscriber>>,
    risk: Option<(RiskEngine, Member)>,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Self {
            config,
            msp: RwLock::new(HashMap::new()),
            state: RwLock::new(State {
                chains: ChannelId::ALL.map(|c| vec![Block::genesis(c)]),
                pending: Default::default(),
                next_ticket: 0,
                device_status: HashMap::new(),
                units: HashMap::new(),
            }),
            subscribers: Mutex::new(Vec::new()),
            risk: None,
        }
    }

    /// Installs the risk engine, acting under `member` (which must have the
    /// RiskEngine role and is registered here).
    pub fn with_risk_engine(mut self, engine: RiskEngine, member: Member) -> Result<Self, LedgerError> {
        if member.identity().role != OrgRole::RiskEngine {
            return Err(LedgerError::PolicyDenied {
                role: member.identity().role,
                channel: ChannelId::RiskManagement,
                op: "run risk analysis on",
            });
        }
        self.register(member.identity().clone())?;
        self.risk = Some((engine, member));
        Ok(self)
    }

    pub fn config(&self) -> &LedgerConfig {
        &self.config
    }

    /// Adds an identity to the membership registry.
    pub fn register(&self, identity: OrgIdentity) -> Result<(), LedgerError> {
        let mut msp = self.msp.write().expect("msp lock");
        if msp.contains_key(&identity.org_id) {
            return Err(LedgerError::DuplicateIdentity(identity.org_id));
        }
        msp.insert(identity.org_id.clone(), identity);
        Ok(())
    }

    fn check_member(&self, identity: &OrgIdentity) -> Result<(), LedgerError> {
        match self.msp.read().expect("msp lock").get(&identity.org_id) {
            Some(known) if known == identity => Ok(()),
            _ => Err(LedgerError::UnknownIdentity(identity.org_id.clone())),
        }
    }

    /// Validates `tx` and queues it for ordering. Returns its ticket.
    pub fn submit(&self, tx: LedgerTransaction, now_us: u64) -> Result<u64, LedgerError> {
        self.check_member(&tx.submitter)?;
        if !tx.signature_valid() {
            return Err(LedgerError::BadSignature);
        }
        let mut st = self.state.write().expect("state lock");
        self.validate(&mut st, &tx)?;
        Ok(Self::enqueue(&mut st, tx, now_us))
    }

    fn enqueue(st: &mut State, tx: LedgerTransaction, now_us: u64) -> u64 {
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        st.pending[tx.channel.index()].push_back(Pending { ticket, tx, submitted_at: now_us });
        ticket
    }

    /// Chaincode checks. Records state that later submissions depend on.
    fn validate(&self, st: &mut State, tx: &LedgerTransaction) -> Result<(), LedgerError> {
        if tx.payload.channel() != tx.channel {
            return Err(LedgerError::InvalidPayload(format!("payload does not belong on the {} channel", tx.channel)));
        }
        if !self.config.access.can_write(tx.submitter.role, tx.channel) {
            return Err(LedgerError::PolicyDenied { role: tx.submitter.role, channel: tx.channel, op: "write" });
        }
        match &tx.payload {
            Payload::Device(r) => {
                let prev = st.device_status.get(&r.device_id).copied();
                match (prev, r.status) {
                    (None, DeviceStatus::Active) | (Some(DeviceStatus::Active), DeviceStatus::Deactivated) => {}
                    (prev, next) => {
                        return Err(LedgerError::InvalidPayload(format!(
                            "device {} cannot go from {prev:?} to {next:?}",
                            r.device_id
                        )))
                    }
                }
                st.device_status.insert(r.device_id, r.status);
            }
            Payload::Data(e) => {
                if !e.value.is_finite() {
                    return Err(LedgerError::InvalidPayload("reading is not finite".into()));
                }
                let key = (e.device_id, e.metric.clone());
                match st.units.get(&key) {
                    Some(u) if *u != e.unit => {
                        return Err(LedgerError::InvalidPayload(format!(
                            "metric {} reported in {} after {}",
                            e.metric, e.unit, u
                        )))
                    }
                    Some(_) => {}
                    None => {
                        st.units.insert(key, e.unit.clone());
                    }
                }
            }
            Payload::Alert(a) => {
                if a.targets.is_empty() {
                    return Err(LedgerError::InvalidPayload("alert has no targets".into()));
                }
                let data = &st.chains[ChannelId::Data.index()];
                let found = data
                    .get(a.source.height as usize)
                    .and_then(|b| b.txs.get(a.source.index as usize))
                    .is_some_and(|t| t.digest() == a.source.digest && t.payload.device_id() == a.device_id);
                if !found {
                    return Err(LedgerError::InvalidPayload("alert source is not a committed data entry".into()));
                }
            }
        }
        Ok(())
    }

    /// Cuts every block that is due at `now_us`.
    pub fn tick(&self, now_us: u64) -> Vec<CommitInfo> {
        let mut st = self.state.write().expect("state lock");
        let mut out = Vec::new();
        for channel in ChannelId::ALL {
            loop {
                let q = &st.pending[channel.index()];
                let full = q.len() >= self.config.max_block_txs;
                let due =
                    q.front().is_some_and(|p| now_us.saturating_sub(p.submitted_at) >= self.config.block_interval_us);
                if !(full || due) {
                    break;
                }
                out.extend(self.cut_locked(&mut st, channel, now_us));
            }
        }
        out
    }

    /// Earliest time at which [`Ledger::tick`] would cut a block on the
    /// interval rule.
    pub fn next_deadline(&self) -> Option<u64> {
        let st = self.state.read().expect("state lock");
        st.pending.iter().filter_map(|q| q.front()).map(|p| p.submitted_at + self.config.block_interval_us).min()
    }

    pub fn pending_count(&self, channel: ChannelId) -> usize {
        self.state.read().expect("state lock").pending[channel.index()].len()
    }

    /// Cuts a block from whatever is pending on `channel`, regardless of the
    /// cut rules.
    pub fn cut(&self, channel: ChannelId, now_us: u64) -> Vec<CommitInfo> {
        let mut st = self.state.write().expect("state lock");
        self.cut_locked(&mut st, channel, now_us)
    }

    /// Submits and commits at once; the protocol roles write this way.
    pub fn submit_and_commit(&self, tx: LedgerTransaction, now_us: u64) -> Result<Receipt, LedgerError> {
        let channel = tx.channel;
        self.check_member(&tx.submitter)?;
        if !tx.signature_valid() {
            return Err(LedgerError::BadSignature);
        }
        let mut st = self.state.write().expect("state lock");
        self.validate(&mut st, &tx)?;
        let ticket = Self::enqueue(&mut st, tx, now_us);
        loop {
            let infos = self.cut_locked(&mut st, channel, now_us);
            for info in &infos {
                if let Some(i) = info.tickets.iter().position(|t| *t == ticket) {
                    return Ok(Receipt { channel: info.channel, height: info.height, index: i as u32 });
                }
            }
            assert!(!infos.is_empty(), "submitted transaction vanished from the queue");
        }
    }

    fn cut_locked(&self, st: &mut State, channel: ChannelId, now_us: u64) -> Vec<CommitInfo> {
        let q = &mut st.pending[channel.index()];
        if q.is_empty() {
            return Vec::new();
        }
        let n = q.len().min(self.config.max_block_txs.max(1));
        let batch: Vec<Pending> = q.drain(..n).collect();
        let tickets: Vec<u64> = batch.iter().map(|p| p.ticket).collect();
        let chain = &mut st.chains[channel.index()];
        let prev = chain.last().expect("genesis present");
        let block = Block::new(channel, prev.height + 1, prev.hash, batch.into_iter().map(|p| p.tx).collect());
        let height = block.height;
        self.publish(&block);
        chain.push(block);
        let mut out = vec![CommitInfo { channel, height, tickets, committed_at: now_us }];
        if channel == ChannelId::Data {
            out.extend(self.run_risk(st, height, now_us));
        }
        out
    }

    fn run_risk(&self, st: &mut State, height: u64, now_us: u64) -> Vec<CommitInfo> {
        let Some((engine, member)) = &self.risk else {
            return Vec::new();
        };
        let block = &st.chains[ChannelId::Data.index()][height as usize];
        let alerts: Vec<RiskAlert> = block
            .txs
            .iter()
            .enumerate()
            .filter_map(|(i, tx)| match &tx.payload {
                Payload::Data(e) => engine.evaluate(e, EntryRef { height, index: i as u32, digest: tx.digest() }),
                _ => None,
            })
            .collect();
        if alerts.is_empty() {
            return Vec::new();
        }
        for alert in alerts {
            let tx = member.transaction(ChannelId::RiskManagement, Payload::Alert(alert), now_us);
            self.validate(st, &tx).expect("risk engine alerts satisfy chaincode");
            Self::enqueue(st, tx, now_us);
        }
        let mut out = Vec::new();
        while !st.pending[ChannelId::RiskManagement.index()].is_empty() {
            out.extend(self.cut_locked(st, ChannelId::RiskManagement, now_us));
        }
        out
    }

    fn publish(&self, block: &Block) {
        let mut subs = self.subscribers.lock().expect("subscriber lock");
        subs.retain(|s| {
            if s.channel != block.channel {
                return true;
            }
            for (i, tx) in block.txs.iter().enumerate() {
                if !visible(s.scope, &s.identity, &tx.payload) || !matches_filter(&s.filter, &s.identity, &tx.payload) {
                    continue;
                }
                let ev = LedgerEvent { channel: block.channel, height: block.height, index: i as u32, tx: tx.clone() };
                if s.tx.send(ev).is_err() {
                    return false;
                }
            }
            true
        });
    }

    fn read_scope(&self, channel: ChannelId, identity: &OrgIdentity) -> Result<ReadScope, LedgerError> {
        self.check_member(identity)?;
        match self.config.access.read_scope(identity.role, channel) {
            ReadScope::None => Err(LedgerError::PolicyDenied { role: identity.role, channel, op: "read" }),
            scope => Ok(scope),
        }
    }

    /// Committed payloads on `channel` that `identity` may read and that
    /// satisfy `pred`, in commit order.
    pub fn query(
        &self,
        channel: ChannelId,
        identity: &OrgIdentity,
        pred: impl Fn(&Payload) -> bool,
    ) -> Result<Vec<Committed>, LedgerError> {
        let scope = self.read_scope(channel, identity)?;
        let st = self.state.read().expect("state lock");
        let mut out = Vec::new();
        for b in &st.chains[channel.index()] {
            for (i, tx) in b.txs.iter().enumerate() {
                if visible(scope, identity, &tx.payload) && pred(&tx.payload) {
                    out.push(Committed {
                        entry: EntryRef { height: b.height, index: i as u32, digest: tx.digest() },
                        tx: tx.clone(),
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn subscribe(
        &self,
        channel: ChannelId,
        filter: EventFilter,
        identity: &OrgIdentity,
    ) -> Result<Subscription, LedgerError> {
        let scope = self.read_scope(channel, identity)?;
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().expect("subscriber lock").push(Subscriber {
            identity: identity.clone(),
            channel,
            filter,
            scope,
            tx,
        });
        Ok(Subscription { rx })
    }

    /// Height of the newest block on `channel` (0 for genesis only).
    pub fn height(&self, channel: ChannelId) -> u64 {
        self.state.read().expect("state lock").chains[channel.index()].last().map_or(0, |b| b.height)
    }

    pub fn blocks(&self, channel: ChannelId) -> Vec<Block> {
        self.state.read().expect("state lock").chains[channel.index()].clone()
    }

    pub fn verify_chain(&self, channel: ChannelId) -> Result<(), ChainError> {
        let st = self.state.read().expect("state lock");
        verify_blocks(channel, &st.chains[channel.index()])
    }

    pub fn verify_all(&self) -> Result<(), ChainError> {
        ChannelId::ALL.into_iter().try_for_each(|c| self.verify_chain(c))
    }

    pub fn snapshot(&self) -> String {
        let st = self.state.read().expect("state lock");
        encode_snapshot(st.chains.iter().flatten())
    }

    /// Rebuilds a ledger from a snapshot after verifying every chain.
    /// Pending transactions are not part of a snapshot.
    pub fn restore(text: &str, config: LedgerConfig) -> Result<Self, SnapshotError> {
        let snap = parse_snapshot(text)?;
        let ledger = Self::new(config);
        {
            let mut st = ledger.state.write().expect("state lock");
            for (channel, blocks) in snap.chains {
                for b in blocks.iter().flat_map(|b| &b.txs) {
                    match &b.payload {
                        Payload::Device(r) => {
                            st.device_status.insert(r.device_id, r.status);
                        }
                        Payload::Data(e) => {
                            st.units.insert((e.device_id, e.metric.clone()), e.unit.clone());
                        }
                        Payload::Alert(_) => {}
                    }
                }
                st.chains[channel.index()] = blocks;
            }
        }
        Ok(ledger)
    }
}

fn visible(scope: ReadScope, identity: &OrgIdentity, payload: &Payload) -> bool {
    match scope {
        ReadScope::All => true,
        ReadScope::None => false,
        ReadScope::Own => matches!(payload, Payload::Data(e) if e.manufacturer == identity.org_id),
    }
}

fn matches_filter(filter: &EventFilter, identity: &OrgIdentity, payload: &Payload) -> bool {
    match filter {
        EventFilter::All => true,
        EventFilter::Device(d) => payload.device_id() == *d,
        EventFilter::TargetedAtMe => matches!(payload, Payload::Alert(a) if a.targets.contains(&identity.role)),
    }
}

#[cfg(test)]
mod tests;
