use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::crypto::{Digest, LongLivedToken};
use crate::wire::{fixtures, Encode};

struct Orgs {
    server: Member,
    maker: Member,
    other_maker: Member,
    insurer: Member,
    fire: Member,
}

fn orgs() -> Orgs {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    Orgs {
        server: Member::generate("provider", OrgRole::Server, &mut rng),
        maker: Member::generate("acme", OrgRole::Manufacturer, &mut rng),
        other_maker: Member::generate("globex", OrgRole::Manufacturer, &mut rng),
        insurer: Member::generate("insureco", OrgRole::Insurer, &mut rng),
        fire: Member::generate("fire-dept", OrgRole::EmergencyService, &mut rng),
    }
}

fn ledger_with(config: LedgerConfig, o: &Orgs) -> Ledger {
    let mut rng = ChaCha20Rng::seed_from_u64(100);
    let l = Ledger::new(config)
        .with_risk_engine(RiskEngine::default_rules(), Member::generate("risk", OrgRole::RiskEngine, &mut rng))
        .unwrap();
    for m in [&o.server, &o.maker, &o.other_maker, &o.insurer, &o.fire] {
        l.register(m.identity().clone()).unwrap();
    }
    l
}

fn ledger(o: &Orgs) -> Ledger {
    ledger_with(LedgerConfig::default(), o)
}

fn record(id: u8, status: DeviceStatus) -> Payload {
    let k = fixtures::public_keys();
    Payload::Device(DeviceRecord {
        long_lived_token: LongLivedToken([id; 32]),
        server_key: k[3].clone(),
        device_key: k[2].clone(),
        authenticator_key: k[1].clone(),
        device_id: PseudoUuid([id; 16]),
        status,
        timestamp: 1,
    })
}

fn data(id: u8, maker: &str, value: f64) -> Payload {
    Payload::Data(DataEntry {
        device_id: PseudoUuid([id; 16]),
        metric: "temperature_c".into(),
        value,
        unit: "C".into(),
        manufacturer: maker.into(),
        device_key: fixtures::public_keys()[2].clone(),
        timestamp: 2,
    })
}

#[test]
fn server_commits_device_record() {
    let o = orgs();
    let l = ledger(&o);
    let r =
        l.submit_and_commit(o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1), 0).unwrap();
    assert_eq!(r, Receipt { channel: ChannelId::Identity, height: 1, index: 0 });
    assert_eq!(l.height(ChannelId::Identity), 1);
    l.verify_all().unwrap();
}

#[test]
fn manufacturer_cannot_write_identity() {
    let o = orgs();
    let l = ledger(&o);
    let tx = o.maker.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1);
    assert_eq!(
        l.submit(tx, 0),
        Err(LedgerError::PolicyDenied { role: OrgRole::Manufacturer, channel: ChannelId::Identity, op: "write" })
    );
}

#[test]
fn payload_must_match_channel() {
    let o = orgs();
    let l = ledger(&o);
    let tx = o.server.transaction(ChannelId::Identity, data(1, "acme", 20.0), 1);
    assert!(matches!(l.submit(tx, 0), Err(LedgerError::InvalidPayload(_))));
}

#[test]
fn unknown_identity_and_bad_signature() {
    let o = orgs();
    let l = ledger(&o);
    let stranger = Member::generate("stranger", OrgRole::Server, &mut ChaCha20Rng::seed_from_u64(5));
    let tx = stranger.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1);
    assert_eq!(l.submit(tx, 0), Err(LedgerError::UnknownIdentity("stranger".into())));
    let mut tx = o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1);
    tx.timestamp += 1;
    assert_eq!(l.submit(tx, 0), Err(LedgerError::BadSignature));
    // Same org id, different key: not the registered identity.
    let impostor = Member::generate("provider", OrgRole::Server, &mut ChaCha20Rng::seed_from_u64(6));
    let tx = impostor.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1);
    assert_eq!(l.submit(tx, 0), Err(LedgerError::UnknownIdentity("provider".into())));
}

#[test]
fn status_history_is_append_only() {
    let o = orgs();
    let l = ledger(&o);
    let deact = o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Deactivated), 1);
    assert!(matches!(l.submit(deact.clone(), 0), Err(LedgerError::InvalidPayload(_))));
    l.submit_and_commit(o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1), 0).unwrap();
    let first = l.blocks(ChannelId::Identity)[1].clone();
    l.submit_and_commit(deact.clone(), 0).unwrap();
    assert!(matches!(l.submit(deact, 0), Err(LedgerError::InvalidPayload(_))));
    let again = o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1);
    assert!(matches!(l.submit(again, 0), Err(LedgerError::InvalidPayload(_))));
    // Earlier history is untouched.
    assert_eq!(l.blocks(ChannelId::Identity)[1], first);
    let hist = l.query(ChannelId::Identity, o.server.identity(), |_| true).unwrap();
    let statuses: Vec<_> = hist
        .iter()
        .map(|c| match &c.tx.payload {
            Payload::Device(r) => r.status,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(statuses, vec![DeviceStatus::Active, DeviceStatus::Deactivated]);
}

#[test]
fn query_scopes() {
    let o = orgs();
    let l = ledger(&o);
    for (i, maker) in [(1, "acme"), (2, "globex"), (3, "acme")] {
        l.submit_and_commit(o.server.transaction(ChannelId::Data, data(i, maker, 20.0), 1), 0).unwrap();
    }
    assert_eq!(l.query(ChannelId::Data, o.insurer.identity(), |_| true).unwrap().len(), 3);
    assert_eq!(l.query(ChannelId::Data, o.server.identity(), |_| true).unwrap().len(), 3);
    let own = l.query(ChannelId::Data, o.maker.identity(), |_| true).unwrap();
    assert_eq!(own.len(), 2);
    assert!(own.iter().all(|c| matches!(&c.tx.payload, Payload::Data(e) if e.manufacturer == "acme")));
    assert_eq!(l.query(ChannelId::Data, o.other_maker.identity(), |_| true).unwrap().len(), 1);
    assert!(matches!(
        l.query(ChannelId::Identity, o.fire.identity(), |_| true),
        Err(LedgerError::PolicyDenied { op: "read", .. })
    ));
    assert!(matches!(l.query(ChannelId::Data, o.fire.identity(), |_| true), Err(LedgerError::PolicyDenied { .. })));
}

#[test]
fn queries_never_cross_channels() {
    let o = orgs();
    let l = ledger(&o);
    l.submit_and_commit(o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1), 0).unwrap();
    l.submit_and_commit(o.server.transaction(ChannelId::Data, data(1, "acme", 80.0), 1), 0).unwrap();
    for channel in ChannelId::ALL {
        let got = l.query(channel, o.server.identity(), |_| true).unwrap();
        assert_eq!(got.len(), 1);
        assert!(got.iter().all(|c| c.tx.channel == channel && c.tx.payload.channel() == channel));
    }
}

/// Every role x channel x operation against the default matrix.
#[test]
fn access_matrix_is_enforced_everywhere() {
    let o = orgs();
    let l = ledger(&o);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let risk_member = Member::generate("risk-2", OrgRole::RiskEngine, &mut rng);
    l.register(risk_member.identity().clone()).unwrap();
    let members = [&o.server, &o.maker, &o.insurer, &o.fire, &risk_member];
    let m = AccessMatrix::default();
    for member in members {
        let role = member.identity().role;
        for channel in ChannelId::ALL {
            let can_read = m.read_scope(role, channel) != ReadScope::None;
            assert_eq!(l.query(channel, member.identity(), |_| true).is_ok(), can_read, "{role} read {channel}");
            assert_eq!(
                l.subscribe(channel, EventFilter::All, member.identity()).is_ok(),
                can_read,
                "{role} subscribe {channel}"
            );
            let payload = match channel {
                ChannelId::Identity => record(9, DeviceStatus::Active),
                _ => data(9, "acme", 1.0),
            };
            if channel == ChannelId::RiskManagement {
                // Alert payloads need a real source; policy is checked first.
                let alert = Payload::Alert(RiskAlert {
                    device_id: PseudoUuid([9; 16]),
                    metric: "m".into(),
                    observed: 1.0,
                    comparator: crate::risk::Comparator::Above,
                    threshold: 0.0,
                    unit: "u".into(),
                    severity: crate::risk::Severity::Low,
                    targets: vec![OrgRole::Insurer],
                    source: EntryRef { height: 99, index: 0, digest: Digest::default() },
                });
                let r = l.submit(member.transaction(channel, alert, 1), 0);
                assert_eq!(
                    matches!(r, Err(LedgerError::PolicyDenied { .. })),
                    !m.can_write(role, channel),
                    "{role} write {channel}"
                );
            } else {
                let r = l.submit(member.transaction(channel, payload, 1), 0);
                assert_eq!(r.is_ok(), m.can_write(role, channel), "{role} write {channel}: {r:?}");
                l.cut(channel, 0);
            }
        }
    }
}

#[test]
fn fire_department_gets_one_alert_event() {
    let o = orgs();
    let l = ledger(&o);
    let fire = l.subscribe(ChannelId::RiskManagement, EventFilter::TargetedAtMe, o.fire.identity()).unwrap();
    let insurer = l.subscribe(ChannelId::RiskManagement, EventFilter::TargetedAtMe, o.insurer.identity()).unwrap();
    l.submit_and_commit(o.server.transaction(ChannelId::Data, data(1, "acme", 22.0), 1), 0).unwrap();
    assert!(fire.drain().is_empty());
    l.submit_and_commit(o.server.transaction(ChannelId::Data, data(1, "acme", 75.0), 1), 0).unwrap();
    let ev = fire.drain();
    assert_eq!(ev.len(), 1);
    let Payload::Alert(a) = &ev[0].tx.payload else { panic!("not an alert") };
    assert_eq!(a.source.height, 2);
    assert_eq!(a.observed, 75.0);
    // Insurer is not a target of the default rule.
    assert!(insurer.drain().is_empty());
    assert_eq!(l.height(ChannelId::RiskManagement), 1);
}

#[test]
fn two_subscribers_see_the_same_order() {
    let o = orgs();
    let l = ledger(&o);
    let a = l.subscribe(ChannelId::Data, EventFilter::All, o.insurer.identity()).unwrap();
    let b = l.subscribe(ChannelId::Data, EventFilter::All, o.server.identity()).unwrap();
    for i in 0..20u8 {
        l.submit(o.server.transaction(ChannelId::Data, data(i, "acme", i as f64), 1), 0).unwrap();
        if i % 3 == 0 {
            l.cut(ChannelId::Data, 0);
        }
    }
    l.cut(ChannelId::Data, 0);
    let (ea, eb) = (a.drain(), b.drain());
    assert_eq!(ea.len(), 20);
    assert_eq!(ea, eb);
    let order: Vec<_> = ea.iter().map(|e| (e.height, e.index)).collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
}

#[test]
fn device_filter_and_manufacturer_scope() {
    let o = orgs();
    let l = ledger(&o);
    let dev = l.subscribe(ChannelId::Data, EventFilter::Device(PseudoUuid([2; 16])), o.server.identity()).unwrap();
    let maker = l.subscribe(ChannelId::Data, EventFilter::All, o.maker.identity()).unwrap();
    for (i, m) in [(1, "acme"), (2, "globex"), (2, "globex"), (3, "acme")] {
        l.submit_and_commit(o.server.transaction(ChannelId::Data, data(i, m, 20.0), 1), 0).unwrap();
    }
    assert_eq!(dev.drain().len(), 2);
    assert_eq!(maker.drain().len(), 2);
}

#[test]
fn cut_rules() {
    let o = orgs();
    let l = ledger_with(LedgerConfig { max_block_txs: 2, block_interval_us: 1000, ..Default::default() }, &o);
    for i in 0..3 {
        l.submit(o.server.transaction(ChannelId::Data, data(i, "acme", 1.0), 1), 10).unwrap();
    }
    let infos = l.tick(10);
    assert_eq!(infos.iter().map(|i| i.tickets.len()).collect::<Vec<_>>(), vec![2]);
    assert!(l.tick(500).is_empty());
    assert_eq!(l.next_deadline(), Some(1010));
    let infos = l.tick(1010);
    assert_eq!(infos.iter().map(|i| i.tickets.len()).collect::<Vec<_>>(), vec![1]);
    assert_eq!(l.next_deadline(), None);
}

#[test]
fn single_tx_waits_for_interval() {
    let o = orgs();
    let l = ledger(&o);
    l.submit(o.server.transaction(ChannelId::Data, data(1, "acme", 1.0), 1), 0).unwrap();
    assert!(l.tick(99_999).is_empty());
    let infos = l.tick(100_000);
    assert_eq!(infos.len(), 1);
    assert_eq!(infos[0].tickets.len(), 1);
}

#[test]
fn bulk_commit_keeps_chain_valid() {
    let o = orgs();
    let l = ledger(&o);
    for i in 0..1000u32 {
        let id = (i % 250) as u8;
        l.submit(o.server.transaction(ChannelId::Data, data(id, "acme", 1.0), i as u64), i as u64 * 1000).unwrap();
        l.tick(i as u64 * 1000);
    }
    l.tick(u64::MAX / 2);
    assert_eq!(l.pending_count(ChannelId::Data), 0);
    let blocks = l.blocks(ChannelId::Data);
    assert!(blocks.iter().enumerate().all(|(h, b)| b.height == h as u64));
    assert_eq!(blocks.iter().map(|b| b.txs.len()).sum::<usize>(), 1000);
    l.verify_chain(ChannelId::Data).unwrap();
}

#[test]
fn empty_chain_verifies() {
    let o = orgs();
    let l = ledger(&o);
    for c in ChannelId::ALL {
        assert_eq!(l.height(c), 0);
        l.verify_chain(c).unwrap();
    }
}

#[test]
fn every_byte_flip_in_small_chain_is_detected() {
    let o = orgs();
    let l = ledger(&o);
    l.submit_and_commit(o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1), 0).unwrap();
    l.submit_and_commit(o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Deactivated), 2), 0).unwrap();
    let raw: Vec<Vec<u8>> = l.blocks(ChannelId::Identity).iter().map(|b| b.to_bytes()).collect();
    verify_raw_blocks(ChannelId::Identity, &raw).unwrap();
    let mut checked = 0;
    for b in 0..raw.len() {
        for i in 0..raw[b].len() {
            let mut m = raw.clone();
            m[b][i] ^= 0xff;
            assert!(verify_raw_blocks(ChannelId::Identity, &m).is_err(), "block {b} byte {i}");
            checked += 1;
        }
    }
    assert!(checked > 500);
}

#[test]
fn snapshot_round_trip_and_restore() {
    let o = orgs();
    let l = ledger(&o);
    l.submit_and_commit(o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1), 0).unwrap();
    l.submit_and_commit(o.server.transaction(ChannelId::Data, data(1, "acme", 90.0), 1), 0).unwrap();
    let text = l.snapshot();
    assert_eq!(text.lines().count(), 2 + 2 + 2);
    let snap = parse_snapshot(&text).unwrap();
    assert_eq!(snap.block_count(), 6);
    let r = Ledger::restore(&text, LedgerConfig::default()).unwrap();
    assert_eq!(r.snapshot(), text);
    // Restored state still enforces history rules.
    r.register(o.server.identity().clone()).unwrap();
    let again = o.server.transaction(ChannelId::Identity, record(1, DeviceStatus::Active), 1);
    assert!(matches!(r.submit(again, 0), Err(LedgerError::InvalidPayload(_))));
}

#[test]
fn snapshot_reports_height_of_corruption() {
    let o = orgs();
    let l = ledger(&o);
    for i in 0..3 {
        l.submit_and_commit(o.server.transaction(ChannelId::Data, data(i, "acme", 1.0), 1), 0).unwrap();
    }
    let blocks = l.blocks(ChannelId::Data);
    let mut b2 = blocks[2].clone();
    b2.txs[0].timestamp += 1;
    let mut all: Vec<Block> = l.blocks(ChannelId::Identity);
    all.extend(blocks.iter().take(2).cloned());
    all.push(b2);
    all.extend(blocks.iter().skip(3).cloned());
    all.extend(l.blocks(ChannelId::RiskManagement));
    let err = parse_snapshot(&encode_snapshot(&all)).unwrap_err();
    assert_eq!(err.height(), Some(2));
}

#[test]
fn concurrent_submitters_and_readers() {
    let o = orgs();
    let l = Arc::new(ledger(&o));
    let server = Arc::new(o.server.clone());
    let insurer = o.insurer.identity().clone();
    std::thread::scope(|s| {
        for t in 0..4u8 {
            let l = Arc::clone(&l);
            let server = Arc::clone(&server);
            s.spawn(move || {
                for i in 0..50u8 {
                    let id = t * 50 + i;
                    l.submit_and_commit(server.transaction(ChannelId::Data, data(id, "acme", 1.0), 1), 0).unwrap();
                }
            });
        }
        for _ in 0..2 {
            let l = Arc::clone(&l);
            let insurer = insurer.clone();
            s.spawn(move || {
                let mut last = 0;
                for _ in 0..100 {
                    let n = l.query(ChannelId::Data, &insurer, |_| true).unwrap().len();
                    assert!(n >= last, "committed entries never disappear");
                    last = n;
                }
            });
        }
    });
    assert_eq!(l.query(ChannelId::Data, &insurer, |_| true).unwrap().len(), 200);
    l.verify_all().unwrap();
}
