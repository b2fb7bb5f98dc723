//! Snapshot files: one block per line, each line the standard base64 of the
//! block's canonical encoding. Identity blocks come first, then Data, then
//! Risk Management, each in height order.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use thiserror::Error;

use crate::wire::{Decode, Encode};

use super::block::{verify_raw_blocks, Block, ChainError};
use super::types::ChannelId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

impl SnapshotError {
    /// Height of the offending block when it could be determined.
    pub fn height(&self) -> Option<u64> {
        match self {
            SnapshotError::Chain(c) => Some(c.height),
            SnapshotError::Line { .. } => None,
        }
    }
}

pub fn encode_snapshot<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> String {
    let mut out = String::new();
    for b in blocks {
        out.push_str(&STANDARD.encode(b.to_bytes()));
        out.push('\n');
    }
    out
}

/// Verified contents of a snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub chains: BTreeMap<ChannelId, Vec<Block>>,
}

impl Snapshot {
    pub fn block_count(&self) -> usize {
        self.chains.values().map(Vec::len).sum()
    }
}

/// Decodes every line and verifies every channel chain from genesis.
pub fn parse_snapshot(text: &str) -> Result<Snapshot, SnapshotError> {
    let mut raw: BTreeMap<ChannelId, Vec<Vec<u8>>> = ChannelId::ALL.iter().map(|c| (*c, Vec::new())).collect();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let bytes = STANDARD
            .decode(line.as_bytes())
            .map_err(|e| SnapshotError::Line { line: line_no, reason: format!("invalid base64: {e}") })?;
        let block = Block::from_bytes(&bytes)
            .map_err(|e| SnapshotError::Line { line: line_no, reason: format!("undecodable block: {e}") })?;
        raw.get_mut(&block.channel).expect("all channels present").push(bytes);
    }
    let mut chains = BTreeMap::new();
    for (channel, blocks) in raw {
        chains.insert(channel, verify_raw_blocks(channel, &blocks)?);
    }
    Ok(Snapshot { chains })
}
