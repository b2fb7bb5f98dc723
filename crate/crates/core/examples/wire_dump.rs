//! Prints an annotated hex dump of every fixture message and of a small
//! ledger snapshot.
//!
//! ```text
//! cargo run -p onboard-core --example wire_dump
//! ```

use onboard_core::config::Config;
use onboard_core::demo::run_demo;
use onboard_core::ledger::parse_snapshot;
use onboard_core::wire::{fixtures, Encode, Message};

fn field(name: &str, bytes: &[u8]) {
    let hex = hex::encode(bytes);
    let shown = if hex.len() > 64 { format!("{}.. ({} bytes)", &hex[..64], bytes.len()) } else { hex };
    println!("  {name:<22} {shown}");
}

fn len_prefixed<'a>(name: &str, rest: &mut &'a [u8]) -> &'a [u8] {
    let (len, tail) = rest.split_at(4);
    let n = u32::from_be_bytes(len.try_into().unwrap()) as usize;
    field(&format!("{name}.len"), len);
    let (value, tail) = tail.split_at(n);
    field(name, value);
    *rest = tail;
    value
}

fn fixed<'a>(name: &str, n: usize, rest: &mut &'a [u8]) -> &'a [u8] {
    let (value, tail) = rest.split_at(n);
    field(name, value);
    *rest = tail;
    value
}

fn main() {
    for m in fixtures::messages() {
        let bytes = m.encode();
        println!("{} (tag 0x{:02x}, {} bytes)", m.kind(), m.tag(), bytes.len());
        let mut rest = &bytes[..];
        fixed("tag", 1, &mut rest);
        fixed("body.len", 4, &mut rest);
        match &m {
            Message::SessionHello { .. } => {
                len_prefixed("public_key", &mut rest);
            }
            Message::NonceChallenge { .. } => {
                fixed("nonce", 16, &mut rest);
            }
            Message::DeviceProvision { .. } => {
                fixed("aead_nonce", 12, &mut rest);
                len_prefixed("sealed_body", &mut rest);
                fixed("auth_tag", 16, &mut rest);
            }
            _ => {
                len_prefixed("encapsulation", &mut rest);
                fixed("aead_nonce", 12, &mut rest);
                len_prefixed("sealed_body", &mut rest);
                fixed("auth_tag", 16, &mut rest);
            }
        }
        assert!(rest.is_empty());
        println!();
    }

    let demo = run_demo(&Config::default()).expect("demo runs");
    let snap = parse_snapshot(&demo.snapshot).expect("demo snapshot verifies");
    println!("snapshot: {} blocks", snap.block_count());
    for (channel, blocks) in &snap.chains {
        for b in blocks {
            let bytes = b.to_bytes();
            println!("{channel} height {} ({} txs, {} bytes)", b.height, b.txs.len(), bytes.len());
            let mut rest = &bytes[..];
            fixed("channel", 1, &mut rest);
            fixed("height", 8, &mut rest);
            fixed("prev_hash", 32, &mut rest);
            fixed("tx_count", 4, &mut rest);
            for i in 0..b.txs.len() {
                len_prefixed(&format!("tx[{i}]"), &mut rest);
            }
            fixed("block_hash", 32, &mut rest);
            assert!(rest.is_empty());
        }
    }
}
