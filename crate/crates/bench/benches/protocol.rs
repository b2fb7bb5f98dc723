use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use onboard_core::config::Config;
use onboard_core::crypto::{
    hybrid_decrypt, hybrid_encrypt, kem_keygen, totp_generate, totp_verify, KemAlgorithm, RoleTag, TotpSecret,
};
use onboard_core::demo::run_demo;
use onboard_core::harness::{Passive, Scenario, World};
use onboard_core::ledger::{Ledger, LedgerConfig};
use onboard_core::loadgen::{generate_load, LoadProfile};
use onboard_core::roles::ProtocolConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const NOW: u64 = 1_700_000_010;

fn crypto(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let payload = vec![7u8; 256];
    let mut g = c.benchmark_group("hybrid");
    g.throughput(Throughput::Bytes(payload.len() as u64));
    let mut algorithms = vec![KemAlgorithm::X25519];
    if let Ok(k) = "ml-kem-512".parse() {
        algorithms.push(k);
    }
    for alg in algorithms {
        let pair = kem_keygen(RoleTag::ServerForDevice, 3600, NOW, alg, &mut rng);
        g.bench_function(format!("encrypt/{alg}"), |b| {
            b.iter(|| hybrid_encrypt(pair.public(), &payload, &mut rng).unwrap())
        });
        let ct = hybrid_encrypt(pair.public(), &payload, &mut rng).unwrap();
        g.bench_function(format!("decrypt/{alg}"), |b| b.iter(|| hybrid_decrypt(pair.secret(), &ct).unwrap()));
    }
    g.finish();

    let secret = TotpSecret::generate(&mut rng);
    let token = totp_generate(&secret, NOW, 30);
    c.bench_function("totp/verify", |b| b.iter(|| totp_verify(&secret, &token.digits, NOW + 10, 30)));
}

fn onboarding(c: &mut Criterion) {
    let mut g = c.benchmark_group("onboarding");
    g.sample_size(20);
    for pairs in [1u32, 8] {
        g.throughput(Throughput::Elements(pairs as u64));
        g.bench_function(format!("passive/{pairs}-pairs"), |b| {
            b.iter_batched(
                || World::new(Scenario { pairs, ..Scenario::default() }, ProtocolConfig::default(), 3).unwrap(),
                |mut w| w.run(&mut Passive),
                BatchSize::SmallInput,
            )
        });
    }
    g.bench_function("demo", |b| b.iter(|| run_demo(&Config::default()).unwrap()));
    g.finish();
}

fn ledger(c: &mut Criterion) {
    let snapshot = run_demo(&Config::default()).unwrap().snapshot;
    c.bench_function("ledger/restore-and-verify", |b| {
        b.iter(|| Ledger::restore(&snapshot, LedgerConfig::default()).unwrap())
    });
    let mut g = c.benchmark_group("loadgen");
    g.sample_size(10);
    let profile = LoadProfile { arrival_rate: 150.0, duration_s: 10.0, ..LoadProfile::default() };
    g.throughput(Throughput::Elements((profile.arrival_rate * profile.duration_s) as u64));
    g.bench_function("150tps-10s", |b| b.iter(|| generate_load(&profile, &LedgerConfig::default()).unwrap()));
    g.finish();
}

criterion_group!(benches, crypto, onboarding, ledger);
criterion_main!(benches);
