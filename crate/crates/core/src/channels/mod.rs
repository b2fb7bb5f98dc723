//! Transport between roles.
//!
//! [`SecureChannel`] links one authenticator to the server: reliable, in
//! order, and invisible to the attacker. [`PublicChannel`] carries all
//! device traffic; every frame sits in attacker custody until an
//! [`AdversaryAction`] releases, drops, copies, alters, or forges it.

pub mod knowledge;
pub mod symbols;
pub mod trace;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::wire::{DecodeError, Message};

pub use knowledge::{derive_closure, AtomKind, Knowledge, Term};
pub use symbols::SymbolTable;
pub use trace::{Actor, Event, EventKind, Trace};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("channel closed")]
    ChannelClosed,
    #[error("no message with index {0} is available")]
    UnknownIndex(u64),
    #[error("injected term is not derivable from attacker knowledge")]
    NotDerivable,
    #[error("undecodable frame on secure channel: {0}")]
    Decode(#[from] DecodeError),
}

/// Receiving end of a [`SecureChannel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Authenticator,
    Server,
}

/// Pre-authenticated authenticator/server link.
#[derive(Debug, Default)]
pub struct SecureChannel {
    to_server: VecDeque<Vec<u8>>,
    to_authenticator: VecDeque<Vec<u8>>,
    closed: bool,
    sent: Vec<Vec<u8>>,
}

impl SecureChannel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn secure_send(&mut self, to: Side, m: &Message) -> Result<(), ChannelError> {
        if self.closed {
            return Err(ChannelError::ChannelClosed);
        }
        let bytes = m.encode();
        self.sent.push(bytes.clone());
        match to {
            Side::Server => self.to_server.push_back(bytes),
            Side::Authenticator => self.to_authenticator.push_back(bytes),
        }
        Ok(())
    }

    /// Next queued message for `at`, or `None` when the queue is empty.
    pub fn secure_recv(&mut self, at: Side) -> Result<Option<Message>, ChannelError> {
        if self.closed {
            return Err(ChannelError::ChannelClosed);
        }
        let q = match at {
            Side::Server => &mut self.to_server,
            Side::Authenticator => &mut self.to_authenticator,
        };
        q.pop_front().map(|b| Message::decode(&b)).transpose().map_err(Into::into)
    }

    pub fn has_pending(&self, at: Side) -> bool {
        match at {
            Side::Server => !self.to_server.is_empty(),
            Side::Authenticator => !self.to_authenticator.is_empty(),
        }
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// Every frame ever sent, in order.
    pub fn sent_bytes(&self) -> &[Vec<u8>] {
        &self.sent
    }
}

/// A frame in attacker custody.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub index: u64,
    pub from: Actor,
    pub to: Actor,
    pub bytes: Vec<u8>,
    pub term: Term,
}

/// A frame handed to a receiver. `from` is whatever the sender claimed and
/// is not authenticated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub index: Option<u64>,
    pub from: Actor,
    pub to: Actor,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryAction {
    /// Release a pending frame unchanged.
    Deliver(u64),
    /// Discard a pending frame.
    Drop(u64),
    /// Release a pending frame twice.
    Duplicate(u64),
    /// Send a copy of any frame seen so far, optionally to another endpoint.
    /// The original, if still pending, stays pending.
    Replay { index: u64, to: Option<Actor> },
    /// Release a pending frame with one bit flipped (`bit` taken modulo the
    /// frame length in bits).
    Tamper { index: u64, bit: usize },
    /// Send a frame built by the attacker. `term` must be derivable from its
    /// knowledge.
    Inject { from: Actor, to: Actor, bytes: Vec<u8>, term: Term },
}

impl AdversaryAction {
    pub fn index(&self) -> Option<u64> {
        match self {
            AdversaryAction::Deliver(i)
            | AdversaryAction::Drop(i)
            | AdversaryAction::Duplicate(i)
            | AdversaryAction::Replay { index: i, .. }
            | AdversaryAction::Tamper { index: i, .. } => Some(*i),
            AdversaryAction::Inject { .. } => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdversaryAction::Deliver(_) => "deliver",
            AdversaryAction::Drop(_) => "drop",
            AdversaryAction::Duplicate(_) => "duplicate",
            AdversaryAction::Replay { .. } => "replay",
            AdversaryAction::Tamper { .. } => "tamper",
            AdversaryAction::Inject { .. } => "inject",
        }
    }
}

/// The attacker-owned network between devices, authenticators (for link
/// traffic), and the server.
#[derive(Debug, Default)]
pub struct PublicChannel {
    next_index: u64,
    pending: BTreeMap<u64, InFlight>,
    observed: BTreeMap<u64, InFlight>,
    knowledge: Knowledge,
    closed: bool,
}

impl PublicChannel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hands a frame to the attacker and returns its index.
    pub fn public_send(&mut self, from: Actor, to: Actor, bytes: Vec<u8>, term: Term) -> Result<u64, ChannelError> {
        if self.closed {
            return Err(ChannelError::ChannelClosed);
        }
        let index = self.next_index;
        self.next_index += 1;
        self.knowledge.insert(Term::Atom(AtomKind::Bytes, bytes.clone()));
        self.knowledge.insert(term.clone());
        let f = InFlight { index, from, to, bytes, term };
        self.observed.insert(index, f.clone());
        self.pending.insert(index, f);
        Ok(index)
    }

    pub fn public_deliver(&mut self, action: AdversaryAction) -> Result<Vec<Delivery>, ChannelError> {
        if self.closed {
            return Err(ChannelError::ChannelClosed);
        }
        let out = |f: &InFlight| Delivery { index: Some(f.index), from: f.from, to: f.to, bytes: f.bytes.clone() };
        match action {
            AdversaryAction::Deliver(i) => {
                let f = self.pending.remove(&i).ok_or(ChannelError::UnknownIndex(i))?;
                Ok(vec![out(&f)])
            }
            AdversaryAction::Drop(i) => {
                self.pending.remove(&i).ok_or(ChannelError::UnknownIndex(i))?;
                Ok(vec![])
            }
            AdversaryAction::Duplicate(i) => {
                let f = self.pending.remove(&i).ok_or(ChannelError::UnknownIndex(i))?;
                Ok(vec![out(&f), out(&f)])
            }
            AdversaryAction::Replay { index, to } => {
                let f = self.observed.get(&index).ok_or(ChannelError::UnknownIndex(index))?;
                let mut d = out(f);
                if let Some(to) = to {
                    d.to = to;
                }
                Ok(vec![d])
            }
            AdversaryAction::Tamper { index, bit } => {
                let mut f = self.pending.remove(&index).ok_or(ChannelError::UnknownIndex(index))?;
                if !f.bytes.is_empty() {
                    let bit = bit % (f.bytes.len() * 8);
                    f.bytes[bit / 8] ^= 1 << (bit % 8);
                }
                self.knowledge.insert(Term::Atom(AtomKind::Bytes, f.bytes.clone()));
                Ok(vec![out(&f)])
            }
            AdversaryAction::Inject { from, to, bytes, term } => {
                if !derive_closure(&self.knowledge).can_derive(&term) {
                    return Err(ChannelError::NotDerivable);
                }
                self.knowledge.insert(Term::Atom(AtomKind::Bytes, bytes.clone()));
                self.knowledge.insert(term);
                Ok(vec![Delivery { index: None, from, to, bytes }])
            }
        }
    }

    /// Frames waiting for an attacker decision, oldest first.
    pub fn pending(&self) -> impl Iterator<Item = &InFlight> {
        self.pending.values()
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Every frame ever sent, including delivered and dropped ones.
    pub fn observed(&self) -> impl Iterator<Item = &InFlight> {
        self.observed.values()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.len()
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    /// Adds attacker-originated or public material (public keys, the
    /// attacker's own keys and fresh values) to its knowledge.
    pub fn learn(&mut self, t: Term) {
        self.knowledge.insert(t);
    }

    pub fn close(&mut self) {
        self.closed = true;
    }
}
