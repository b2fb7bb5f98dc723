//! Concrete-to-symbolic mapping for opaque blobs.
//!
//! Whoever creates a ciphertext or signature binds its bytes to the term it
//! stands for. A role that forwards a blob it cannot open (the device
//! forwarding the encrypted token) looks the term up instead of guessing.

use std::collections::HashMap;

use super::knowledge::{AtomKind, Term};
use crate::crypto::{HybridCiphertext, LinkCiphertext, Signature};
use crate::wire::{Encode, Message};

#[derive(Debug, Clone, Default)]
pub struct SymbolTable {
    terms: HashMap<Vec<u8>, Term>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, bytes: Vec<u8>, term: Term) {
        self.terms.insert(bytes, term);
    }

    /// The bound term, or an opaque byte atom for unknown blobs.
    pub fn term_for(&self, bytes: &[u8]) -> Term {
        self.terms.get(bytes).cloned().unwrap_or_else(|| Term::atom(AtomKind::Bytes, bytes))
    }

    pub fn bind_hybrid(&mut self, ct: &HybridCiphertext, term: Term) {
        self.bind(ct.to_bytes(), term);
    }

    pub fn hybrid(&self, ct: &HybridCiphertext) -> Term {
        self.term_for(&ct.to_bytes())
    }

    pub fn bind_link(&mut self, ct: &LinkCiphertext, term: Term) {
        self.bind(ct.to_bytes(), term);
    }

    pub fn bind_signature(&mut self, sig: &Signature, term: Term) {
        self.bind(sig.to_bytes(), term);
    }

    pub fn signature(&self, sig: &Signature) -> Term {
        self.term_for(&sig.to_bytes())
    }

    /// Symbolic form of a whole message.
    pub fn message(&self, m: &Message) -> Term {
        match m {
            Message::SessionHello { public_key } => Term::public_key(public_key),
            Message::NonceChallenge { nonce } => Term::atom(AtomKind::Nonce, nonce.0),
            Message::DeviceProvision { ciphertext } => self.term_for(&ciphertext.to_bytes()),
            other => match other.hybrid_ciphertext() {
                Some(ct) => self.hybrid(ct),
                None => Term::atom(AtomKind::Bytes, other.encode()),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}
