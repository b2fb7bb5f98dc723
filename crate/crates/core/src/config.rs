//! Operator configuration: a TOML file plus environment overrides.
//!
//! Every key is optional; unknown keys are errors. An environment variable
//! `ONBOARD_<SECTION>__<KEY>` (or `ONBOARD_<KEY>` for top-level keys)
//! overrides the file, e.g. `ONBOARD_LEDGER__MU=150`. Values are read as TOML
//! scalars when they parse as one and as strings otherwise.
//!
//! ```toml
//! seed = 42
//! risk_rules = "rules.toml"
//! snapshot = "ledger.snap"
//!
//! [protocol]
//! totp_step = 30
//! kem = "x25519"
//!
//! [ledger]
//! mu = 200.0
//! max_block_txs = 50
//! block_interval_ms = 100
//!
//! [ledger.access]
//! "insurer.data" = "none"
//!
//! [demo]
//! provision_delay = 0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::KemAlgorithm;
use crate::ledger::{Access, AccessMatrix, ChannelId, LedgerConfig, OrgRole};
use crate::risk::RiskEngine;
use crate::roles::ProtocolConfig;

pub const ENV_PREFIX: &str = "ONBOARD_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("environment override {var}: {reason}")]
    Env { var: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    /// Threshold rules for the risk engine; built-in rules when absent.
    pub risk_rules: Option<PathBuf>,
    /// Where commands write or read ledger snapshots.
    pub snapshot: Option<PathBuf>,
    pub protocol: ProtocolSection,
    pub ledger: LedgerSection,
    pub demo: DemoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// TOTP step and token validity, seconds.
    pub totp_step: u64,
    pub session_key_ttl: u64,
    pub device_key_ttl: u64,
    pub server_device_key_ttl: u64,
    pub kem: String,
    pub api_address: String,
    pub registration_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LedgerSection {
    /// Ordering service rate for the load generator, transactions per second.
    pub mu: f64,
    pub max_block_txs: usize,
    pub block_interval_ms: u64,
    /// `"role.channel" = "level"`; levels are none, read, read-own, write,
    /// read-write.
    pub access: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    /// Seconds between token issue and provisioning.
    pub provision_delay: u64,
    pub manufacturer: String,
    /// An ordinary reading, then one that should raise an alert.
    pub reading: f64,
    pub alert_reading: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            risk_rules: None,
            snapshot: None,
            protocol: ProtocolSection::default(),
            ledger: LedgerSection::default(),
            demo: DemoSection::default(),
        }
    }
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            totp_step: p.totp_step,
            session_key_ttl: p.session_key_ttl,
            device_key_ttl: p.device_key_ttl,
            server_device_key_ttl: p.server_device_key_ttl,
            kem: p.kem.name().into(),
            api_address: p.api_address,
            registration_retries: p.registration_retries,
        }
    }
}

impl Default for LedgerSection {
    fn default() -> Self {
        let l = LedgerConfig::default();
        Self {
            mu: 200.0,
            max_block_txs: l.max_block_txs,
            block_interval_ms: l.block_interval_us / 1000,
            access: BTreeMap::new(),
        }
    }
}

impl Default for DemoSection {
    fn default() -> Self {
        Self { provision_delay: 0, manufacturer: "acme".into(), reading: 22.5, alert_reading: 75.0 }
    }
}

/// Reads `text` as a TOML scalar, falling back to a plain string.
fn scalar(text: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.into()),
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::with_overrides(text, std::iter::empty())
    }

    /// Parses `text`, applies `ONBOARD_*` overrides from `env`, and
    /// validates the result.
    pub fn with_overrides(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (var, value) in env {
            let Some(rest) = var.strip_prefix(ENV_PREFIX) else { continue };
            let path: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
            if path.iter().any(String::is_empty) {
                return Err(ConfigError::Env { var, reason: "empty key segment".into() });
            }
            let (key, sections) = path.split_last().expect("split yields at least one part");
            let mut t = &mut table;
            for s in sections {
                let entry = t.entry(s.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
                t = match entry {
                    toml::Value::Table(inner) => inner,
                    _ => return Err(ConfigError::Env { var: var.clone(), reason: format!("`{s}` is not a section") }),
                };
            }
            t.insert(key.clone(), scalar(&value));
        }
        let cfg: Config = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`) and applies overrides from the
    /// process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?,
            None => String::new(),
        };
        Self::with_overrides(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        let p = &self.protocol;
        if p.totp_step == 0 || p.session_key_ttl == 0 || p.device_key_ttl == 0 || p.server_device_key_ttl == 0 {
            return bad("protocol durations must be positive");
        }
        if !(self.ledger.mu > 0.0 && self.ledger.mu.is_finite()) {
            return bad("ledger.mu must be positive");
        }
        if self.ledger.max_block_txs == 0 || self.ledger.block_interval_ms == 0 {
            return bad("ledger block parameters must be positive");
        }
        if !self.demo.reading.is_finite() || !self.demo.alert_reading.is_finite() {
            return bad("demo readings must be finite");
        }
        self.kem()?;
        self.access_matrix()?;
        Ok(())
    }

    pub fn kem(&self) -> Result<KemAlgorithm, ConfigError> {
        self.protocol.kem.parse().map_err(ConfigError::Invalid)
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig, ConfigError> {
        let p = &self.protocol;
        Ok(ProtocolConfig {
            totp_step: p.totp_step,
            session_key_ttl: p.session_key_ttl,
            device_key_ttl: p.device_key_ttl,
            server_device_key_ttl: p.server_device_key_ttl,
            kem: self.kem()?,
            api_address: p.api_address.clone(),
            registration_retries: p.registration_retries,
        })
    }

    pub fn access_matrix(&self) -> Result<AccessMatrix, ConfigError> {
        let mut m = AccessMatrix::default();
        for (cell, level) in &self.ledger.access {
            let (role, channel) = cell
                .split_once('.')
                .ok_or_else(|| ConfigError::Invalid(format!("access key `{cell}` is not role.channel")))?;
            let role: OrgRole = role.parse().map_err(ConfigError::Invalid)?;
            let channel: ChannelId = channel.parse().map_err(ConfigError::Invalid)?;
            let access: Access = level.parse().map_err(ConfigError::Invalid)?;
            m.set(role, channel, access);
        }
        Ok(m)
    }

    pub fn ledger_config(&self) -> Result<LedgerConfig, ConfigError> {
        Ok(LedgerConfig {
            max_block_txs: self.ledger.max_block_txs,
            block_interval_us: self.ledger.block_interval_ms * 1000,
            access: self.access_matrix()?,
        })
    }

    pub fn risk_engine(&self) -> Result<RiskEngine, ConfigError> {
        match &self.risk_rules {
            None => Ok(RiskEngine::default_rules()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
                RiskEngine::from_toml(&text).map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }
}
