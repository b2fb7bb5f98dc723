//! Blocks and per-channel hash chains.
//!
//! Encoding: `channel (u8) | height (u64) | prev_hash (32) | tx count (u32) |
//! tx (u32 length + bytes)* | block_hash (32)`. The block hash is
//! `SHA-256(prev_hash | tx count | tx*)`, i.e. over the previous hash and the
//! canonical transaction list exactly as it appears in the encoding.

use thiserror::Error;

use crate::crypto::{hash_parts, Digest};
use crate::wire::{Decode, DecodeError, Encode, Reader, Writer};

use super::types::{ChannelId, LedgerTransaction};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub channel: ChannelId,
    pub height: u64,
    pub prev_hash: Digest,
    pub txs: Vec<LedgerTransaction>,
    pub hash: Digest,
}

fn tx_list_bytes(txs: &[LedgerTransaction]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(txs.len() as u32);
    for tx in txs {
        w.bytes(&tx.to_bytes());
    }
    w.finish()
}

impl Block {
    pub fn genesis(channel: ChannelId) -> Self {
        Self::new(channel, 0, Digest::default(), Vec::new())
    }

    pub fn new(channel: ChannelId, height: u64, prev_hash: Digest, txs: Vec<LedgerTransaction>) -> Self {
        let hash = hash_parts(&[&prev_hash.0, &tx_list_bytes(&txs)]);
        Self { channel, height, prev_hash, txs, hash }
    }

    pub fn compute_hash(&self) -> Digest {
        hash_parts(&[&self.prev_hash.0, &tx_list_bytes(&self.txs)])
    }
}

impl Encode for Block {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(self.channel.code()).u64(self.height).fixed(&self.prev_hash.0);
        w.fixed(&tx_list_bytes(&self.txs));
        w.fixed(&self.hash.0);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let channel = ChannelId::from_code(r.u8()?).ok_or(DecodeError::InvalidField("channel"))?;
        let height = r.u64()?;
        let prev_hash = Digest(r.array()?);
        let n = r.u32()? as usize;
        // Each transaction needs at least its 4-byte length prefix.
        if n > r.remaining() / 4 {
            return Err(DecodeError::Truncated);
        }
        let mut txs = Vec::with_capacity(n);
        for _ in 0..n {
            txs.push(LedgerTransaction::from_bytes(r.bytes()?)?);
        }
        let hash = Digest(r.array()?);
        Ok(Self { channel, height, prev_hash, txs, hash })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainFault {
    #[error("block does not decode: {0}")]
    Undecodable(DecodeError),
    #[error("encoding is not canonical")]
    NonCanonical,
    #[error("block belongs to channel {found}, expected {expected}")]
    WrongChannel { expected: ChannelId, found: ChannelId },
    #[error("height {found} where {expected} was expected")]
    HeightMismatch { expected: u64, found: u64 },
    #[error("genesis block is not empty with a zero parent")]
    BadGenesis,
    #[error("previous-hash link broken")]
    BrokenLink,
    #[error("block hash mismatch")]
    HashMismatch,
    #[error("transaction {0} has an invalid signature")]
    BadSignature(usize),
    #[error("transaction {0} payload does not belong to this channel")]
    PayloadMismatch(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{channel} chain invalid at height {height}: {fault}")]
pub struct ChainError {
    pub channel: ChannelId,
    pub height: u64,
    pub fault: ChainFault,
}

fn check_block(channel: ChannelId, expected_height: u64, prev: Option<&Block>, b: &Block) -> Result<(), ChainFault> {
    if b.channel != channel {
        return Err(ChainFault::WrongChannel { expected: channel, found: b.channel });
    }
    if b.height != expected_height {
        return Err(ChainFault::HeightMismatch { expected: expected_height, found: b.height });
    }
    match prev {
        None if !b.txs.is_empty() || b.prev_hash != Digest::default() => return Err(ChainFault::BadGenesis),
        Some(p) if b.prev_hash != p.hash => return Err(ChainFault::BrokenLink),
        _ => {}
    }
    if b.compute_hash() != b.hash {
        return Err(ChainFault::HashMismatch);
    }
    for (i, tx) in b.txs.iter().enumerate() {
        if tx.channel != channel || tx.payload.channel() != channel {
            return Err(ChainFault::PayloadMismatch(i));
        }
        if !tx.signature_valid() {
            return Err(ChainFault::BadSignature(i));
        }
    }
    Ok(())
}

/// Checks a decoded chain from genesis.
pub fn verify_blocks(channel: ChannelId, blocks: &[Block]) -> Result<(), ChainError> {
    if blocks.is_empty() {
        return Err(ChainError { channel, height: 0, fault: ChainFault::BadGenesis });
    }
    for (h, b) in blocks.iter().enumerate() {
        let prev = if h == 0 { None } else { Some(&blocks[h - 1]) };
        check_block(channel, h as u64, prev, b).map_err(|fault| ChainError { channel, height: h as u64, fault })?;
    }
    Ok(())
}

/// Decodes and checks a chain given as raw block encodings, including that
/// each encoding is the canonical one for the decoded block.
pub fn verify_raw_blocks(channel: ChannelId, raw: &[Vec<u8>]) -> Result<Vec<Block>, ChainError> {
    let mut blocks = Vec::with_capacity(raw.len());
    for (h, bytes) in raw.iter().enumerate() {
        let err = |fault| ChainError { channel, height: h as u64, fault };
        let b = Block::from_bytes(bytes).map_err(|e| err(ChainFault::Undecodable(e)))?;
        if &b.to_bytes() != bytes {
            return Err(err(ChainFault::NonCanonical));
        }
        blocks.push(b);
    }
    verify_blocks(channel, &blocks)?;
    Ok(blocks)
}
