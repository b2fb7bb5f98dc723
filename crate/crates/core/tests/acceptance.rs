//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line, even when an earlier one
//! fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use onboard_core::config::Config;
use onboard_core::crypto::{totp_generate, totp_verify, TotpSecret};
use onboard_core::demo::run_demo;
use onboard_core::harness::{
    builtin_script, run_attack, run_campaign, CampaignConfig, CampaignSummary, Expectation, Passive, ReportSpec,
    Scenario, World, DEFAULT_START,
};
use onboard_core::ledger::{
    parse_snapshot, verify_raw_blocks, Block, ChannelId, DataEntry, DeviceStatus, EventFilter, Ledger, LedgerConfig,
    Member, OrgRole, Payload,
};
use onboard_core::loadgen::{parse_rates, sweep, LoadProfile};
use onboard_core::risk::RiskEngine;
use onboard_core::roles::ProtocolConfig;
use onboard_core::wire::{fixtures, Decode, Encode};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn reading(value: f64) -> ReportSpec {
    ReportSpec { metric: "temperature_c".into(), value, unit: "C".into() }
}

fn lemma_campaign() -> Check {
    let cfg = CampaignConfig {
        runs: 10_000,
        seed: 0xacce_0001,
        weights: "deliver=8,drop=1,duplicate=1,replay=2,tamper=2,inject=2,wait=1".parse().unwrap(),
        ..CampaignConfig::default()
    };
    let records = run_campaign(&cfg, &ProtocolConfig::default()).map_err(|e| e.to_string())?;
    let s = CampaignSummary::from_records(&records);
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.dedup();
    ensure!(seeds.len() == 10_000, "only {} distinct seeds", seeds.len());
    ensure!(s.violating_runs == 0, "{} violating runs, first seeds {:?}", s.violating_runs, s.failing_seeds);
    ensure!(s.forged_registrations == 0, "{} forged registrations", s.forged_registrations);
    ensure!(s.exhausted == 0, "{} runs hit the step bound", s.exhausted);
    ensure!(s.injected > 0 && s.rejections > 0, "adversary never interfered: {s:?}");
    Ok(format!(
        "0 violations / {} runs ({} injected frames, {} rejections, {} registrations)",
        s.runs, s.injected, s.rejections, s.registrations
    ))
}

fn known_attacks() -> Check {
    let names = [
        "replay-device-request",
        "replay-stale-token",
        "tamper-ciphertext-bit",
        "token-swap-across-devices",
        "inject-forged-registration",
    ];
    let mut codes = vec![];
    for name in names {
        let script = builtin_script(name).map_err(|e| e.to_string())?;
        let Expectation::Rejected { code } = &script.expect else {
            return Err(format!("{name}: expects no rejection"));
        };
        for seed in 0..5 {
            let r = run_attack(&script, ProtocolConfig::default(), seed).map_err(|e| e.to_string())?;
            ensure!(r.defeated, "{name} seed {seed}: {:?}", r.failure);
            ensure!(r.server_rejections.contains(code), "{name}: server rejected with {:?}", r.server_rejections);
            ensure!(r.forged_registrations == 0, "{name}: attacker registered");
            ensure!(
                r.registrations <= script.scenario.pairs as usize,
                "{name}: {} registrations for {} devices",
                r.registrations,
                script.scenario.pairs
            );
            ensure!(r.verdicts.all_hold(), "{name}: {:?}", r.verdicts);
        }
        codes.push(format!("{name}={code}"));
    }
    Ok(codes.join(", "))
}

fn totp_window() -> Check {
    // Direct check at the token layer.
    let secret = TotpSecret::generate(&mut ChaCha20Rng::seed_from_u64(5));
    let token = totp_generate(&secret, DEFAULT_START, 30);
    ensure!(totp_verify(&secret, &token.digits, DEFAULT_START + 29, 30), "token layer rejects +29 s");
    ensure!(!totp_verify(&secret, &token.digits, DEFAULT_START + 31, 30), "token layer accepts +31 s");

    // And through the full protocol.
    let run = |delay| {
        let mut w =
            World::new(Scenario { provision_delay: delay, ..Scenario::default() }, ProtocolConfig::default(), 11)
                .unwrap();
        w.run(&mut Passive);
        (w.registered_ids().len(), w.server_rejections().map(String::from).collect::<Vec<_>>())
    };
    let (ok, rej) = run(29);
    ensure!(ok == 1 && rej.is_empty(), "+29 s: {ok} registrations, rejections {rej:?}");
    let (ok, rej) = run(31);
    ensure!(ok == 0 && rej == ["token-expired"], "+31 s: {ok} registrations, rejections {rej:?}");
    Ok("+29 s accepted, +31 s token-expired".into())
}

fn lifecycle() -> Check {
    let scenario = Scenario { reports: vec![reading(21.0)], revoke: true, ..Scenario::default() };
    let mut w = World::new(scenario, ProtocolConfig::default(), 21).map_err(|e| e.to_string())?;
    w.run(&mut Passive);
    let entry = w.server().registry().values().next().ok_or("no registry entry")?;
    let (device_id, device_key) = (entry.device_id, entry.device_key.clone());
    let records: Vec<_> = w
        .ledger()
        .blocks(ChannelId::Identity)
        .into_iter()
        .flat_map(|b| b.txs)
        .filter_map(|tx| match tx.payload {
            Payload::Device(r) if r.device_id == device_id => Some(r.status),
            _ => None,
        })
        .collect();
    ensure!(records == [DeviceStatus::Active, DeviceStatus::Deactivated], "identity records {records:?}");
    ensure!(w.server().crl_contains(&device_key), "device key missing from the CRL");
    ensure!(w.server().registry_crl_disjoint(), "revoked key still active in the registry");

    w.send_report(0, &reading(22.0)).map_err(|e| e.to_string())?;
    w.run(&mut Passive);
    let rej: Vec<_> = w.server_rejections().collect();
    ensure!(rej == ["revoked-device"], "post-revocation report: {rej:?}");
    ensure!(w.trace().count("DataStored") == 1, "post-revocation report was stored");

    let demo = run_demo(&Config::default()).map_err(|e| e.to_string())?;
    ensure!(demo.success(), "demo failed at {:?}", demo.failed_step);
    Ok("Active then Deactivated, key on CRL, post-revocation report rejected".into())
}

fn tamper_evidence() -> Check {
    // Ten devices registered and revoked: twenty committed identity blocks.
    let scenario = Scenario { pairs: 10, reports: vec![reading(20.0)], revoke: true, ..Scenario::default() };
    let mut w = World::new(scenario, ProtocolConfig::default(), 31).map_err(|e| e.to_string())?;
    w.run(&mut Passive);
    let snapshot = w.ledger().snapshot();
    let parsed = parse_snapshot(&snapshot).map_err(|e| e.to_string())?;
    let committed = parsed.chains[&ChannelId::Identity].len() - 1;
    ensure!(committed == 20, "expected 20 committed identity blocks, found {committed}");

    let lines: Vec<Vec<u8>> = snapshot.lines().map(|l| STANDARD.decode(l).unwrap()).collect();
    let raw: Vec<Vec<u8>> = parsed.chains[&ChannelId::Identity].iter().map(|b| b.to_bytes()).collect();
    verify_raw_blocks(ChannelId::Identity, &raw).map_err(|e| e.to_string())?;
    let (mut flips, mut misses) = (0u64, 0u64);
    for b in 1..raw.len() {
        for i in 0..raw[b].len() {
            for mask in [0x01u8, 0xff] {
                let mut m = raw.clone();
                m[b][i] ^= mask;
                flips += 1;
                if verify_raw_blocks(ChannelId::Identity, &m).is_ok() {
                    misses += 1;
                }
            }
        }
    }
    ensure!(misses == 0, "{misses} of {flips} flips went undetected");

    // The same sweep through the snapshot file, one flipped byte per committed block line.
    let mut file_flips = 0;
    for (n, bytes) in lines.iter().enumerate() {
        if Block::from_bytes(bytes).map(|b| b.height == 0).unwrap_or(true) {
            continue;
        }
        for i in (0..bytes.len()).step_by(7) {
            let mut m = lines.clone();
            m[n][i] ^= 0x80;
            let text: String = m.iter().map(|l| format!("{}\n", STANDARD.encode(l))).collect();
            ensure!(Ledger::restore(&text, LedgerConfig::default()).is_err(), "snapshot line {n} byte {i} undetected");
            file_flips += 1;
        }
    }
    Ok(format!("{flips} single-byte flips over 20 blocks, 0 misses; {file_flips} snapshot-level flips rejected"))
}

fn risk_alerting() -> Check {
    let mut rng = ChaCha20Rng::seed_from_u64(61);
    let server = Member::generate("provider", OrgRole::Server, &mut rng);
    let fire = Member::generate("fire-dept", OrgRole::EmergencyService, &mut rng);
    let insurer = Member::generate("insureco", OrgRole::Insurer, &mut rng);
    let ledger = Ledger::new(LedgerConfig::default())
        .with_risk_engine(RiskEngine::default_rules(), Member::generate("risk", OrgRole::RiskEngine, &mut rng))
        .map_err(|e| e.to_string())?;
    for m in [&server, &fire, &insurer] {
        ledger.register(m.identity().clone()).map_err(|e| e.to_string())?;
    }
    let fire_sub = ledger
        .subscribe(ChannelId::RiskManagement, EventFilter::TargetedAtMe, fire.identity())
        .map_err(|e| e.to_string())?;
    let insurer_sub =
        ledger.subscribe(ChannelId::RiskManagement, EventFilter::All, insurer.identity()).map_err(|e| e.to_string())?;
    let server_sub =
        ledger.subscribe(ChannelId::RiskManagement, EventFilter::All, server.identity()).map_err(|e| e.to_string())?;
    let entry = |id: u8, value: f64| {
        Payload::Data(DataEntry {
            device_id: onboard_core::crypto::PseudoUuid([id; 16]),
            metric: "temperature_c".into(),
            value,
            unit: "C".into(),
            manufacturer: "acme".into(),
            device_key: fixtures::public_keys()[2].clone(),
            timestamp: DEFAULT_START,
        })
    };

    // One matching reading between two normal ones.
    for (i, v) in [21.0, 75.0, 23.0].into_iter().enumerate() {
        ledger
            .submit_and_commit(server.transaction(ChannelId::Data, entry(1, v), DEFAULT_START), i as u64 * 1000)
            .map_err(|e| e.to_string())?;
    }
    let alerts: Vec<_> = ledger.blocks(ChannelId::RiskManagement).into_iter().flat_map(|b| b.txs).collect();
    ensure!(alerts.len() == 1, "{} alerts on the risk channel", alerts.len());
    let Payload::Alert(alert) = &alerts[0].payload else { return Err("risk channel holds a non-alert".into()) };
    ensure!(alert.observed == 75.0 && alert.source.height == 2, "alert points at {:?}", alert.source);
    for (role, sub) in [("emergency", &fire_sub), ("insurer", &insurer_sub), ("server", &server_sub)] {
        let got = sub.drain();
        ensure!(got.len() == 1, "{role} received {} events", got.len());
        ensure!(got[0].tx == alerts[0], "{role} received a different alert");
    }

    // Several matches: delivery follows data commit order.
    for (i, id) in [7u8, 3, 9].into_iter().enumerate() {
        ledger
            .submit_and_commit(server.transaction(ChannelId::Data, entry(id, 80.0 + i as f64), DEFAULT_START), 10_000)
            .map_err(|e| e.to_string())?;
    }
    let order: Vec<u8> = fire_sub
        .drain()
        .iter()
        .filter_map(|e| match &e.tx.payload {
            Payload::Alert(a) => Some(a.device_id.0[0]),
            _ => None,
        })
        .collect();
    ensure!(order == [7, 3, 9], "alerts delivered in order {order:?}");
    ensure!(insurer_sub.drain().len() == 3 && server_sub.drain().len() == 3, "subscribers saw different counts");
    Ok("1 alert, 1 event each for emergency service, insurer, server; commit order kept".into())
}

fn benchmark_shape() -> Check {
    let mut rates = parse_rates("30:300:25").map_err(|e| e.to_string())?;
    ensure!(rates.len() == 12, "grid has {} rates", rates.len());
    rates.extend([100.0, 160.0, 175.0]);
    rates.sort_by(f64::total_cmp);
    let template = LoadProfile { duration_s: 30.0, service_rate: 200.0, seed: 7, ..LoadProfile::default() };
    let report = sweep(&rates, &template, &LedgerConfig::default()).map_err(|e| e.to_string())?;
    for r in &report.rows {
        if r.rate <= 160.0 {
            ensure!((r.throughput - r.rate).abs() <= 0.05 * r.rate, "rate {}: throughput {}", r.rate, r.throughput);
        }
        if r.rate <= 175.0 {
            ensure!(r.mean_ms < 500.0, "rate {}: mean {} ms", r.rate, r.mean_ms);
        }
        ensure!(r.throughput <= r.rate * 1.01, "rate {}: throughput {} above offered", r.rate, r.throughput);
    }
    let at = |rate| report.row(rate).map(|r| r.mean_ms).ok_or(format!("no row for {rate}"));
    let (l100, l175, l300) = (at(100.0)?, at(175.0)?, at(300.0)?);
    ensure!(l300 > 4.0 * l100, "latency at 300 ({l300:.1} ms) not above 4x latency at 100 ({l100:.1} ms)");
    // Grid resolution is 25 tx/s, so the knee is informational here.
    let knee = report.knee(2.0).map_or("none".to_string(), |k| format!("{k}"));
    Ok(format!(
        "mean {l100:.1} ms at 100, {l175:.1} ms at 175, {l300:.0} ms at 300; first rate past the knee {knee} tx/s"
    ))
}

fn determinism() -> Check {
    let a = run_demo(&Config::default()).map_err(|e| e.to_string())?;
    let b = run_demo(&Config::default()).map_err(|e| e.to_string())?;
    ensure!(a.success(), "demo failed at {:?}", a.failed_step);
    ensure!(a.transcript_text().as_bytes() == b.transcript_text().as_bytes(), "transcripts differ");
    ensure!(a.snapshot.as_bytes() == b.snapshot.as_bytes(), "snapshots differ");
    Ok(format!("{} transcript lines, {} snapshot bytes identical", a.transcript.len(), a.snapshot.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("lemma campaign", lemma_campaign),
        ("known-attack suite", known_attacks),
        ("TOTP window", totp_window),
        ("lifecycle ledger state", lifecycle),
        ("tamper evidence", tamper_evidence),
        ("risk alerting", risk_alerting),
        ("benchmark shape", benchmark_shape),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{secs:.1}s]", n + 1);
            }
        }
    }
    println!("acceptance: {}/8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
