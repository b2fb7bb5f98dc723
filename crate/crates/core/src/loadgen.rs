//! Open-loop load generation against the ledger.
//!
//! The run is a discrete-event simulation in virtual microseconds: arrivals
//! feed a single FIFO ordering service with exponential service times at
//! rate `service_rate`; each ordered transaction is submitted to a real
//! [`Ledger`], whose block-cut rules (size or interval) decide the commit
//! time. Latency is arrival to commit. Nothing depends on the host clock, so
//! a sweep is reproducible from its seed and fast to run.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{gen_long_lived_token, gen_pseudo_uuid, kem_keygen, KemAlgorithm, RoleTag};
use crate::ledger::{
    ChannelId, DataEntry, DeviceRecord, DeviceStatus, Ledger, LedgerConfig, LedgerTransaction, Member, OrgRole, Payload,
};

#[derive(Debug, Error, PartialEq)]
pub enum LoadError {
    #[error("invalid load profile: {0}")]
    InvalidProfile(String),
    #[error("invalid rate list `{0}`: {1}")]
    InvalidRates(String, String),
    #[error("ledger rejected a generated transaction: {0}")]
    Ledger(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    /// Evenly spaced arrivals.
    #[default]
    Uniform,
    Poisson,
}

impl FromStr for ArrivalProcess {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "poisson" => Ok(Self::Poisson),
            _ => Err(format!("unknown arrival process `{s}` (expected uniform or poisson)")),
        }
    }
}

impl fmt::Display for ArrivalProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Poisson => "poisson",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadProfile {
    /// Offered load, transactions per second.
    pub arrival_rate: f64,
    pub duration_s: f64,
    pub arrival: ArrivalProcess,
    /// Fraction of transactions that are Identity-channel registrations; the
    /// rest are Data-channel readings.
    pub identity_share: f64,
    /// Ordering service rate, transactions per second.
    pub service_rate: f64,
    /// Leading fraction of the run excluded from statistics.
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        Self {
            arrival_rate: 100.0,
            duration_s: 30.0,
            arrival: ArrivalProcess::Uniform,
            identity_share: 0.2,
            service_rate: 200.0,
            warmup_fraction: 0.1,
            seed: 0,
        }
    }
}

impl LoadProfile {
    pub fn validate(&self) -> Result<(), LoadError> {
        let bad = |m: String| Err(LoadError::InvalidProfile(m));
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return bad(format!("arrival rate must be positive, got {}", self.arrival_rate));
        }
        if !(self.service_rate > 0.0 && self.service_rate.is_finite()) {
            return bad(format!("service rate must be positive, got {}", self.service_rate));
        }
        if !(self.duration_s >= 10.0 && self.duration_s.is_finite()) {
            return bad(format!("duration must be at least 10 s, got {}", self.duration_s));
        }
        if !(0.0..=1.0).contains(&self.identity_share) {
            return bad(format!("identity share must be in [0, 1], got {}", self.identity_share));
        }
        if !(0.0..0.5).contains(&self.warmup_fraction) {
            return bad(format!("warm-up fraction must be in [0, 0.5), got {}", self.warmup_fraction));
        }
        Ok(())
    }
}

/// Results for one offered rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub rate: f64,
    /// Transactions that arrived in the measurement window and committed
    /// before it closed, per second.
    pub throughput: f64,
    pub mean_ms: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    /// Transactions measured (arrived in the window, eventually committed).
    #[serde(skip)]
    pub success: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    /// CSV with header `rate,throughput,mean_ms,p50,p95,p99`.
    pub fn write_csv(&self, out: impl Write) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    /// First offered rate whose mean latency exceeds `factor` times the
    /// mean latency at the lowest rate.
    pub fn knee(&self, factor: f64) -> Option<f64> {
        let base = self.rows.first()?.mean_ms;
        self.rows.iter().find(|r| r.mean_ms > factor * base).map(|r| r.rate)
    }

    /// True if mean latency never drops by more than `tolerance_ms` from one
    /// rate to the next.
    pub fn latency_monotone(&self, tolerance_ms: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_ms + tolerance_ms >= w[0].mean_ms)
    }

    pub fn row(&self, rate: f64) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| (r.rate - rate).abs() < 1e-9)
    }
}

/// Parses `start:end:step` (the end is always included, even off-step) or a
/// comma-separated list. Rates must be positive and increasing.
pub fn parse_rates(spec: &str) -> Result<Vec<f64>, LoadError> {
    let err = |m: &str| LoadError::InvalidRates(spec.into(), m.into());
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| err(&format!("`{}` is not a number", s.trim())));
    let rates = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, end, step] = parts[..] else { return Err(err("expected start:end:step")) };
        let (start, end, step) = (num(start)?, num(end)?, num(step)?);
        if step <= 0.0 || end < start {
            return Err(err("need step > 0 and end >= start"));
        }
        let mut v = vec![];
        let mut k = 0.0;
        while start + k * step <= end + 1e-9 {
            v.push(start + k * step);
            k += 1.0;
        }
        if (v.last().copied().unwrap_or(f64::NAN) - end).abs() > 1e-9 {
            v.push(end);
        }
        v
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if rates.is_empty() {
        return Err(err("no rates"));
    }
    if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(err("rates must be positive"));
    }
    if rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(err("rates must be increasing"));
    }
    Ok(rates)
}

struct TxFactory {
    server: Member,
    template: DeviceRecord,
    data_key: crate::crypto::PublicKey,
    rng: ChaCha20Rng,
    identity_share: f64,
}

impl TxFactory {
    fn new(seed: u64, identity_share: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let server = Member::generate("provider", OrgRole::Server, &mut rng);
        let kp = |role, rng: &mut ChaCha20Rng| kem_keygen(role, u64::MAX / 4, 0, KemAlgorithm::X25519, rng);
        let server_key = kp(RoleTag::ServerForDevice, &mut rng).public().clone();
        let device_key = kp(RoleTag::DeviceForServer, &mut rng).public().clone();
        let authenticator_key = kp(RoleTag::AuthForServer, &mut rng).public().clone();
        let template = DeviceRecord {
            long_lived_token: gen_long_lived_token(&mut rng),
            server_key,
            device_key: device_key.clone(),
            authenticator_key,
            device_id: gen_pseudo_uuid(&mut rng),
            status: DeviceStatus::Active,
            timestamp: 0,
        };
        Self { server, template, data_key: device_key, rng, identity_share }
    }

    fn next(&mut self, now_us: u64) -> LedgerTransaction {
        let device_id = gen_pseudo_uuid(&mut self.rng);
        if self.rng.gen_bool(self.identity_share) {
            let record = DeviceRecord { device_id, timestamp: now_us, ..self.template.clone() };
            self.server.transaction(ChannelId::Identity, Payload::Device(record), now_us)
        } else {
            let entry = DataEntry {
                device_id,
                metric: "temperature_c".into(),
                value: self.rng.gen_range(15.0..30.0),
                unit: "C".into(),
                manufacturer: "acme".into(),
                device_key: self.data_key.clone(),
                timestamp: now_us,
            };
            self.server.transaction(ChannelId::Data, Payload::Data(entry), now_us)
        }
    }
}

/// Runs one offered rate.
pub fn generate_load(profile: &LoadProfile, ledger_config: &LedgerConfig) -> Result<LatencyRow, LoadError> {
    profile.validate()?;
    let mut factory = TxFactory::new(profile.seed, profile.identity_share);
    let ledger = Ledger::new(ledger_config.clone());
    ledger.register(factory.server.identity().clone()).map_err(|e| LoadError::Ledger(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(profile.seed ^ 0x0bde_4a11);
    let service = Exp::new(profile.service_rate).expect("validated positive");
    let gap = Exp::new(profile.arrival_rate).expect("validated positive");

    let horizon_us = profile.duration_s * 1e6;
    let mut arrivals: Vec<f64> = Vec::new();
    let mut t = 0.0;
    loop {
        t = match profile.arrival {
            ArrivalProcess::Uniform => arrivals.len() as f64 * 1e6 / profile.arrival_rate,
            ArrivalProcess::Poisson => t + gap.sample(&mut rng) * 1e6,
        };
        if t >= horizon_us {
            break;
        }
        arrivals.push(t);
    }

    // Ledger tickets are handed out in submission order, which is arrival
    // order because the orderer is FIFO.
    let mut committed_at = vec![u64::MAX; arrivals.len()];
    let mut first_ticket = None;
    let mut record = |infos: Vec<crate::ledger::CommitInfo>, first: u64| {
        for info in infos {
            for ticket in info.tickets {
                if let Some(slot) = committed_at.get_mut((ticket - first) as usize) {
                    *slot = info.committed_at;
                }
            }
        }
    };
    let mut orderer_free = 0.0f64;
    for &a in &arrivals {
        let done = orderer_free.max(a) + service.sample(&mut rng) * 1e6;
        orderer_free = done;
        let done_us = done.round() as u64;
        while let Some(d) = ledger.next_deadline().filter(|d| *d <= done_us) {
            let infos = ledger.tick(d);
            record(infos, first_ticket.unwrap_or(0));
        }
        let tx = factory.next(done_us);
        let ticket = ledger.submit(tx, done_us).map_err(|e| LoadError::Ledger(e.to_string()))?;
        let first = *first_ticket.get_or_insert(ticket);
        record(ledger.tick(done_us), first);
    }
    while let Some(d) = ledger.next_deadline() {
        record(ledger.tick(d), first_ticket.unwrap_or(0));
    }

    let warmup_us = horizon_us * profile.warmup_fraction;
    let window_s = (horizon_us - warmup_us) / 1e6;
    let mut latencies_ms = Vec::new();
    let mut in_window = 0u64;
    for (a, c) in arrivals.iter().zip(&committed_at) {
        if *a < warmup_us {
            continue;
        }
        debug_assert_ne!(*c, u64::MAX, "every transaction commits after the drain");
        latencies_ms.push((*c as f64 - a) / 1e3);
        if (*c as f64) <= horizon_us {
            in_window += 1;
        }
    }
    latencies_ms.sort_by(f64::total_cmp);
    let n = latencies_ms.len();
    let pct = |p: f64| if n == 0 { 0.0 } else { latencies_ms[((p * n as f64).ceil() as usize).clamp(1, n) - 1] };
    Ok(LatencyRow {
        rate: profile.arrival_rate,
        throughput: in_window as f64 / window_s,
        mean_ms: if n == 0 { 0.0 } else { latencies_ms.iter().sum::<f64>() / n as f64 },
        p50: pct(0.50),
        p95: pct(0.95),
        p99: pct(0.99),
        success: n as u64,
    })
}

/// One row per rate, computed in parallel. Each rate gets its own ledger
/// and a seed derived from the template seed and the rate's position.
pub fn sweep(rates: &[f64], template: &LoadProfile, ledger_config: &LedgerConfig) -> Result<LatencyReport, LoadError> {
    if rates.is_empty() || rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LoadError::InvalidRates(format!("{rates:?}"), "rates must be nonempty and increasing".into()));
    }
    let rows = rates
        .par_iter()
        .enumerate()
        .map(|(i, &rate)| {
            let p = LoadProfile { arrival_rate: rate, seed: template.seed.wrapping_add(i as u64), ..template.clone() };
            generate_load(&p, ledger_config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LatencyReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_batching() -> LedgerConfig {
        LedgerConfig { max_block_txs: 1, ..LedgerConfig::default() }
    }

    fn profile(rate: f64) -> LoadProfile {
        LoadProfile { arrival_rate: rate, ..LoadProfile::default() }
    }

    #[test]
    fn rate_ranges() {
        let r = parse_rates("30:300:25").unwrap();
        assert_eq!(r.len(), 12);
        assert_eq!((r[0], r[10], r[11]), (30.0, 280.0, 300.0));
        assert_eq!(parse_rates("10:30:10").unwrap(), [10.0, 20.0, 30.0]);
        assert_eq!(parse_rates("50, 100,150").unwrap(), [50.0, 100.0, 150.0]);
        for bad in ["", "30:300", "a:b:c", "30:10:5", "10:20:0", "100,50", "0,10", "-5"] {
            assert!(parse_rates(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn profile_validation() {
        assert!(profile(0.0).validate().is_err());
        assert!(LoadProfile { duration_s: 5.0, ..profile(10.0) }.validate().is_err());
        assert!(LoadProfile { identity_share: 1.5, ..profile(10.0) }.validate().is_err());
        assert!(LoadProfile { service_rate: f64::NAN, ..profile(10.0) }.validate().is_err());
        assert!(profile(10.0).validate().is_ok());
        assert_eq!("Poisson".parse::<ArrivalProcess>().unwrap(), ArrivalProcess::Poisson);
        assert!("bursty".parse::<ArrivalProcess>().is_err());
    }

    /// Without batching the system is an M/M/1 queue: mean sojourn
    /// 1 / (mu - lambda).
    #[test]
    fn unbatched_poisson_matches_mm1() {
        for (lambda, mu) in [(100.0, 200.0), (150.0, 200.0), (50.0, 100.0)] {
            let p = LoadProfile {
                arrival_rate: lambda,
                service_rate: mu,
                arrival: ArrivalProcess::Poisson,
                duration_s: 400.0,
                ..LoadProfile::default()
            };
            let row = generate_load(&p, &no_batching()).unwrap();
            let expected_ms = 1e3 / (mu - lambda);
            let rel = (row.mean_ms - expected_ms).abs() / expected_ms;
            assert!(rel < 0.1, "lambda {lambda} mu {mu}: got {} want {expected_ms}", row.mean_ms);
            // Sojourn time in M/M/1 is exponential: median = mean * ln 2.
            let median = expected_ms * std::f64::consts::LN_2;
            assert!((row.p50 - median).abs() / median < 0.1, "p50 {} want {median}", row.p50);
        }
    }

    /// With a negligible service time and uniform arrivals, every block is
    /// cut by the interval rule: the first transaction of a block waits the
    /// full interval, later ones less.
    #[test]
    fn interval_cut_bounds_latency() {
        let p = LoadProfile { arrival_rate: 20.0, service_rate: 1e7, identity_share: 0.0, ..LoadProfile::default() };
        let cfg = LedgerConfig { block_interval_us: 100_000, max_block_txs: 1000, ..LedgerConfig::default() };
        let row = generate_load(&p, &cfg).unwrap();
        // 20 tx/s is one arrival per 50 ms: blocks hold two transactions,
        // waiting 100 ms and 50 ms.
        assert!((row.mean_ms - 75.0).abs() < 1.0, "{row:?}");
        assert!(row.p99 <= 100.5);
    }

    #[test]
    fn percentiles_are_ordered_and_throughput_bounded() {
        let report =
            sweep(&[30.0, 120.0, 250.0], &LoadProfile { duration_s: 20.0, ..profile(1.0) }, &LedgerConfig::default())
                .unwrap();
        for r in &report.rows {
            assert!(r.p50 <= r.p95 && r.p95 <= r.p99, "{r:?}");
            assert!(r.throughput <= r.rate, "{r:?}");
            assert!(r.success > 0);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let t = LoadProfile { arrival: ArrivalProcess::Poisson, ..profile(1.0) };
        let a = sweep(&[40.0, 80.0], &t, &LedgerConfig::default()).unwrap();
        let b = sweep(&[40.0, 80.0], &t, &LedgerConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(sweep(&[80.0, 40.0], &t, &LedgerConfig::default()).is_err());
    }

    #[test]
    fn overload_latency_grows_with_duration() {
        let short =
            generate_load(&LoadProfile { duration_s: 15.0, ..profile(300.0) }, &LedgerConfig::default()).unwrap();
        let long =
            generate_load(&LoadProfile { duration_s: 45.0, ..profile(300.0) }, &LedgerConfig::default()).unwrap();
        assert!(long.mean_ms > 2.0 * short.mean_ms, "{short:?} {long:?}");
    }

    #[test]
    fn knee_sits_just_below_the_service_rate() {
        let mu = 200.0;
        let t = LoadProfile { duration_s: 30.0, service_rate: mu, ..profile(1.0) };
        let fine = sweep(&parse_rates("120:220:10").unwrap(), &t, &LedgerConfig::default()).unwrap();
        let baseline = sweep(&[30.0], &t, &LedgerConfig::default()).unwrap();
        let mut rows = baseline.rows;
        rows.extend(fine.rows);
        let knee = LatencyReport { rows }.knee(2.0).unwrap();
        assert!((0.8 * mu..=mu).contains(&knee), "knee at {knee}");
    }

    #[test]
    fn latency_rises_across_the_standard_grid() {
        let t = LoadProfile { duration_s: 20.0, ..profile(1.0) };
        let r = sweep(&parse_rates("30:300:25").unwrap(), &t, &LedgerConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 12);
        // Half a block interval absorbs batching noise at low load.
        assert!(r.latency_monotone(50.0), "{}", r.to_csv());
    }

    #[test]
    fn csv_has_documented_columns() {
        let report = LatencyReport {
            rows: vec![LatencyRow {
                rate: 30.0,
                throughput: 29.9,
                mean_ms: 1.5,
                p50: 1.0,
                p95: 2.0,
                p99: 3.0,
                success: 9,
            }],
        };
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("rate,throughput,mean_ms,p50,p95,p99"));
        assert_eq!(lines.next(), Some("30.0,29.9,1.5,1.0,2.0,3.0"));
    }

    #[test]
    fn knee_and_monotonicity_helpers() {
        let row =
            |rate, mean_ms| LatencyRow { rate, throughput: rate, mean_ms, p50: 0.0, p95: 0.0, p99: 0.0, success: 1 };
        let r = LatencyReport { rows: vec![row(10.0, 50.0), row(20.0, 45.0), row(30.0, 120.0)] };
        assert_eq!(r.knee(2.0), Some(30.0));
        assert_eq!(r.knee(3.0), None);
        assert!(r.latency_monotone(10.0));
        assert!(!r.latency_monotone(1.0));
    }
}
