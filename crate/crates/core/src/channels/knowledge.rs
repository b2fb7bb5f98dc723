//! Symbolic attacker knowledge.
//!
//! Messages on the public channel carry a [`Term`] describing their structure
//! next to their concrete bytes. The attacker's knowledge is a set of terms
//! closed under analysis (unpairing, decryption with a known key, reading a
//! signed body). Synthesis (pairing, encryption to a known public key,
//! signing with a known secret key, hashing) is checked on demand by
//! [`Knowledge::can_derive`]. Nothing is ever derived by breaking a
//! primitive: no forging, no inverting hashes, no decrypting without the key.

use std::collections::BTreeSet;

use crate::crypto::{LinkKey, PublicKey, SecretKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtomKind {
    PublicKey,
    Nonce,
    Token,
    DeviceId,
    LongLivedToken,
    LinkKey,
    Text,
    Number,
    /// Bytes with no known structure, e.g. a tampered or observed frame.
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Atom(AtomKind, Vec<u8>),
    /// A secret key, identified by the encoding of its public half.
    SecretKey {
        public: Vec<u8>,
        secret: Vec<u8>,
    },
    Tuple(Vec<Term>),
    /// Public-key encryption to the key whose encoding is `recipient`.
    Enc {
        recipient: Vec<u8>,
        body: Box<Term>,
    },
    /// Symmetric encryption under a link key.
    SymEnc {
        key: Vec<u8>,
        body: Box<Term>,
    },
    /// A signature by the key whose public encoding is `signer`.
    Sig {
        signer: Vec<u8>,
        body: Box<Term>,
    },
    Hash(Box<Term>),
}

impl Term {
    pub fn public_key(pk: &PublicKey) -> Term {
        Term::Atom(AtomKind::PublicKey, pk.to_bytes())
    }

    pub fn secret_key(sk: &SecretKey) -> Term {
        Term::SecretKey { public: sk.public().to_bytes(), secret: sk.expose_bytes() }
    }

    pub fn link_key(k: &LinkKey) -> Term {
        Term::Atom(AtomKind::LinkKey, k.0.to_vec())
    }

    pub fn atom(kind: AtomKind, bytes: impl Into<Vec<u8>>) -> Term {
        Term::Atom(kind, bytes.into())
    }

    pub fn text(s: &str) -> Term {
        Term::Atom(AtomKind::Text, s.as_bytes().to_vec())
    }

    pub fn enc(to: &PublicKey, body: Term) -> Term {
        Term::Enc { recipient: to.to_bytes(), body: Box::new(body) }
    }

    pub fn sym(key: &LinkKey, body: Term) -> Term {
        Term::SymEnc { key: key.0.to_vec(), body: Box::new(body) }
    }

    pub fn sig(signer: &PublicKey, body: Term) -> Term {
        Term::Sig { signer: signer.to_bytes(), body: Box::new(body) }
    }

    pub fn tuple(items: impl IntoIterator<Item = Term>) -> Term {
        Term::Tuple(items.into_iter().collect())
    }

    /// True if `needle` occurs anywhere inside this term, including itself.
    pub fn contains(&self, needle: &Term) -> bool {
        if self == needle {
            return true;
        }
        match self {
            Term::Tuple(ts) => ts.iter().any(|t| t.contains(needle)),
            Term::Enc { body, .. } | Term::SymEnc { body, .. } | Term::Sig { body, .. } | Term::Hash(body) => {
                body.contains(needle)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Knowledge {
    terms: BTreeSet<Term>,
}

impl Knowledge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: Term) -> bool {
        self.terms.insert(t)
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.terms.contains(t)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    pub fn is_subset(&self, other: &Knowledge) -> bool {
        self.terms.is_subset(&other.terms)
    }

    /// True if any secret key with public encoding `public` is known.
    pub fn knows_secret_for(&self, public: &[u8]) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::SecretKey { public: p, .. } if p == public))
    }

    /// True if `t` can be built from this set by synthesis. Call on a closed
    /// set (see [`derive_closure`]) for the full attacker capability.
    pub fn can_derive(&self, t: &Term) -> bool {
        if self.terms.contains(t) {
            return true;
        }
        match t {
            Term::Tuple(ts) => ts.iter().all(|x| self.can_derive(x)),
            Term::Enc { recipient, body } => {
                self.terms.contains(&Term::Atom(AtomKind::PublicKey, recipient.clone())) && self.can_derive(body)
            }
            Term::SymEnc { key, body } => {
                self.terms.contains(&Term::Atom(AtomKind::LinkKey, key.clone())) && self.can_derive(body)
            }
            Term::Sig { signer, body } => self.knows_secret_for(signer) && self.can_derive(body),
            Term::Hash(body) => self.can_derive(body),
            Term::Atom(..) | Term::SecretKey { .. } => false,
        }
    }
}

impl FromIterator<Term> for Knowledge {
    fn from_iter<I: IntoIterator<Item = Term>>(iter: I) -> Self {
        Self { terms: iter.into_iter().collect() }
    }
}

impl Extend<Term> for Knowledge {
    fn extend<I: IntoIterator<Item = Term>>(&mut self, iter: I) {
        self.terms.extend(iter);
    }
}

/// Fixpoint of the analysis rules over `k`.
pub fn derive_closure(k: &Knowledge) -> Knowledge {
    let mut set = k.terms.clone();
    loop {
        let secrets: BTreeSet<&[u8]> = set
            .iter()
            .filter_map(|t| match t {
                Term::SecretKey { public, .. } => Some(public.as_slice()),
                _ => None,
            })
            .collect();
        let links: BTreeSet<&[u8]> = set
            .iter()
            .filter_map(|t| match t {
                Term::Atom(AtomKind::LinkKey, b) => Some(b.as_slice()),
                _ => None,
            })
            .collect();
        let mut fresh = Vec::new();
        for t in &set {
            match t {
                Term::Tuple(ts) => fresh.extend(ts.iter().filter(|x| !set.contains(*x)).cloned()),
                Term::Enc { recipient, body } if secrets.contains(recipient.as_slice()) => fresh.push((**body).clone()),
                Term::SymEnc { key, body } if links.contains(key.as_slice()) => fresh.push((**body).clone()),
                Term::Sig { body, .. } => fresh.push((**body).clone()),
                Term::SecretKey { public, .. } => fresh.push(Term::Atom(AtomKind::PublicKey, public.clone())),
                _ => {}
            }
        }
        let before = set.len();
        set.extend(fresh);
        if set.len() == before {
            return Knowledge { terms: set };
        }
    }
}
