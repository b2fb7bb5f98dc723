//! End-to-end walkthrough: one authenticator onboards one device, the device
//! reports a normal and an alarming reading, then it is revoked and tries to
//! report once more.
//!
//! The output is a pure function of the configuration, so two runs with the
//! same config produce byte-identical transcripts and snapshots.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::channels::{Actor, EventKind};
use crate::config::{Config, ConfigError};
use crate::harness::{Passive, ReportSpec, Scenario, ScenarioError, Verdicts, World};
use crate::ledger::{ChannelId, EventFilter, LedgerError, Member, OrgRole};

pub const METRIC: &str = "temperature_c";
pub const UNIT: &str = "C";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("ledger: {0}")]
    Ledger(#[from] LedgerError),
}

/// Milestones in the order the demo reaches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DemoStep {
    Login,
    Token,
    Provision,
    Register,
    Activate,
    Report,
    Alert,
    Revoke,
    RejectAfterRevoke,
}

impl DemoStep {
    pub const ALL: [DemoStep; 9] = [
        DemoStep::Login,
        DemoStep::Token,
        DemoStep::Provision,
        DemoStep::Register,
        DemoStep::Activate,
        DemoStep::Report,
        DemoStep::Alert,
        DemoStep::Revoke,
        DemoStep::RejectAfterRevoke,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DemoStep::Login => "login",
            DemoStep::Token => "token",
            DemoStep::Provision => "provision",
            DemoStep::Register => "register",
            DemoStep::Activate => "activate",
            DemoStep::Report => "report",
            DemoStep::Alert => "alert",
            DemoStep::Revoke => "revoke",
            DemoStep::RejectAfterRevoke => "reject-after-revoke",
        }
    }
}

impl fmt::Display for DemoStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub transcript: Vec<String>,
    /// Ledger snapshot after the run.
    pub snapshot: String,
    pub failed_step: Option<DemoStep>,
    /// Rejection codes, in order, from any party.
    pub rejections: Vec<&'static str>,
    /// Alerts the emergency-service subscriber received.
    pub alerts_delivered: usize,
    pub verdicts: Verdicts,
}

impl DemoOutcome {
    pub fn success(&self) -> bool {
        self.failed_step.is_none()
    }

    pub fn transcript_text(&self) -> String {
        let mut s = self.transcript.join("\n");
        s.push('\n');
        s
    }
}

fn short(hex: impl fmt::Display) -> String {
    let s = hex.to_string();
    s[..s.len().min(8)].to_string()
}

fn describe(kind: &EventKind) -> String {
    match kind {
        EventKind::SessionEstablished { authenticator } => {
            format!("session established for authenticator {authenticator}")
        }
        EventKind::TokenIssued { token, .. } => format!("transient token issued (sha256 {})", short(token)),
        EventKind::DeviceProvisioned => "device provisioned over the local link".into(),
        EventKind::DeviceRequestSent { device_id } => format!("registration request sent by {}", short(device_id)),
        EventKind::DeviceRequestAccepted { device_id, .. } => format!("request from {} validated", short(device_id)),
        EventKind::RequestRejected { reason } => format!("request rejected: {reason}"),
        EventKind::RegistrationSuccess { device_id, .. } => format!("device {} registered", short(device_id)),
        EventKind::KeypairDelivered { device_id, .. } => format!("activation material sent to {}", short(device_id)),
        EventKind::DeviceActivated { device_id } => format!("device {} active", short(device_id)),
        EventKind::DeviceConnected { device_id } => format!("device {} connected to authenticator", short(device_id)),
        EventKind::DataStored { device_id } => format!("reading from {} stored", short(device_id)),
        EventKind::DataRejected { reason } => format!("reading rejected: {reason}"),
        EventKind::RiskAlert { device_id, metric } => format!("risk alert on {metric} for {}", short(device_id)),
        EventKind::Revoked { device_id } => format!("device {} revoked", short(device_id)),
        EventKind::LedgerCommit { channel, height } => format!("block {height} committed on {channel}"),
        EventKind::AdversaryAction { action, .. } => format!("network: {action}"),
    }
}

/// Runs the demo described by `config`.
pub fn run_demo(config: &Config) -> Result<DemoOutcome, DemoError> {
    let reading = |value| ReportSpec { metric: METRIC.into(), value, unit: UNIT.into() };
    let scenario = Scenario {
        provision_delay: config.demo.provision_delay,
        manufacturer: config.demo.manufacturer.clone(),
        reports: vec![reading(config.demo.reading), reading(config.demo.alert_reading)],
        revoke: true,
        ..Scenario::default()
    };
    let mut world = World::with_ledger(
        scenario,
        config.protocol_config()?,
        config.seed,
        config.ledger_config()?,
        config.risk_engine()?,
    )?;
    let mut org_rng = ChaCha20Rng::seed_from_u64(config.seed.wrapping_add(1));
    let responder = Member::generate("emergency", OrgRole::EmergencyService, &mut org_rng);
    world.ledger().register(responder.identity().clone())?;
    let alerts =
        world.ledger().subscribe(ChannelId::RiskManagement, EventFilter::TargetedAtMe, responder.identity())?;

    world.run(&mut Passive);
    let revoked = world.trace().count("Revoked") > 0;
    if revoked {
        // A revoked device still holds its credentials; the server must refuse it.
        let _ = world.send_report(0, &reading(config.demo.reading));
        world.run(&mut Passive);
    }

    let transcript = world
        .trace()
        .events()
        .iter()
        .filter(|e| e.actor != Actor::Adversary)
        .map(|e| format!("{:>4}  {:<16} {}", e.time, e.actor.to_string(), describe(&e.kind)))
        .collect();
    let rejections: Vec<&'static str> = world.rejections().iter().map(|(_, e)| e.code()).collect();
    let alerts_delivered = alerts.drain().len();
    let t = world.trace();
    let reached = |step: DemoStep| match step {
        DemoStep::Login => t.count("SessionEstablished") > 0,
        DemoStep::Token => t.count("TokenIssued") > 0,
        DemoStep::Provision => t.count("DeviceProvisioned") > 0,
        DemoStep::Register => t.count("RegistrationSuccess") == 1,
        DemoStep::Activate => t.count("DeviceActivated") == 1,
        DemoStep::Report => t.count("DataStored") == 2,
        DemoStep::Alert => t.count("RiskAlert") == 1 && alerts_delivered == 1,
        DemoStep::Revoke => revoked && world.server().crl_len() == 1,
        DemoStep::RejectAfterRevoke => world.server_rejections().any(|c| c == "revoked-device"),
    };
    let failed_step = DemoStep::ALL.into_iter().find(|s| !reached(*s));
    Ok(DemoOutcome {
        transcript,
        snapshot: world.ledger().snapshot(),
        failed_step,
        rejections,
        alerts_delivered,
        verdicts: world.verdicts(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{Ledger, LedgerConfig};

    #[test]
    fn default_demo_succeeds() {
        let out = run_demo(&Config::default()).unwrap();
        assert_eq!(out.failed_step, None, "{:?}\n{}", out.rejections, out.transcript_text());
        assert_eq!(out.rejections, ["revoked-device"]);
        assert!(out.verdicts.all_hold());
        let ledger = Ledger::restore(&out.snapshot, LedgerConfig::default()).unwrap();
        ledger.verify_all().unwrap();
        // Registration and revocation.
        assert_eq!(ledger.height(ChannelId::Identity), 2);
        assert!(out.transcript.iter().any(|l| l.contains("risk alert on temperature_c")));
    }

    #[test]
    fn demo_is_deterministic() {
        let a = run_demo(&Config::default()).unwrap();
        let b = run_demo(&Config::default()).unwrap();
        assert_eq!(a, b);
        let c = run_demo(&Config { seed: 43, ..Config::default() }).unwrap();
        assert_ne!(a.snapshot, c.snapshot);
    }

    #[test]
    fn late_provisioning_fails_at_registration() {
        let mut cfg = Config::default();
        cfg.protocol.totp_step = 1;
        cfg.demo.provision_delay = 2;
        let out = run_demo(&cfg).unwrap();
        assert!(!out.success());
        assert_eq!(out.failed_step, Some(DemoStep::Register));
        assert_eq!(out.rejections, ["token-expired"]);
    }

    #[test]
    fn low_reading_raises_no_alert() {
        let mut cfg = Config::default();
        cfg.demo.alert_reading = 30.0;
        let out = run_demo(&cfg).unwrap();
        assert_eq!(out.failed_step, Some(DemoStep::Alert));
        assert_eq!(out.alerts_delivered, 0);
    }
}
