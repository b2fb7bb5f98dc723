//! Threshold rules over Data-channel entries.
//!
//! The ledger calls [`RiskEngine::evaluate`] for every committed data entry;
//! a match becomes a [`RiskAlert`] on the Risk Management channel.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{DataEntry, EntryRef, OrgRole, RiskAlert};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RiskError {
    #[error("unknown or missing notification role: {0}")]
    UnknownRole(String),
    #[error("no rule for metric `{0}`")]
    UnknownMetric(String),
    #[error("threshold must be finite")]
    NonFiniteThreshold,
    #[error("rule file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    /// Strictly greater than the threshold.
    Above,
    /// Strictly less than the threshold.
    Below,
}

impl Comparator {
    pub fn code(self) -> u8 {
        match self {
            Comparator::Above => 1,
            Comparator::Below => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Comparator::Above),
            2 => Some(Comparator::Below),
            _ => None,
        }
    }

    pub fn matches(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Above => value > threshold,
            Comparator::Below => value < threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Low,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub fn code(self) -> u8 {
        match self {
            Severity::Low => 1,
            Severity::Medium => 2,
            Severity::High => 3,
            Severity::Critical => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Severity::Low, Severity::Medium, Severity::High, Severity::Critical].into_iter().find(|s| s.code() == c)
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Low => "low",
            Severity::Medium => "medium",
            Severity::High => "high",
            Severity::Critical => "critical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRule {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub unit: String,
    pub severity: Severity,
    pub targets: Vec<OrgRole>,
}

impl ThresholdRule {
    fn validate(&self) -> Result<(), RiskError> {
        if !self.threshold.is_finite() {
            return Err(RiskError::NonFiniteThreshold);
        }
        if self.targets.is_empty() {
            return Err(RiskError::UnknownRole(format!("rule `{}` has no targets", self.metric)));
        }
        Ok(())
    }

    pub fn matches(&self, entry: &DataEntry) -> bool {
        entry.metric == self.metric && entry.unit == self.unit && self.comparator.matches(entry.value, self.threshold)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<ThresholdRule>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RiskEngine {
    rules: Vec<ThresholdRule>,
}

impl RiskEngine {
    pub fn new(rules: Vec<ThresholdRule>) -> Result<Self, RiskError> {
        for r in &rules {
            r.validate()?;
        }
        Ok(Self { rules })
    }

    /// Parses a TOML rule file: a list of `[[rule]]` tables.
    pub fn from_toml(text: &str) -> Result<Self, RiskError> {
        let f: RuleFile = toml::from_str(text).map_err(|e| RiskError::Parse(e.to_string()))?;
        Self::new(f.rule)
    }

    /// One rule: temperature above 60 °C is high severity for emergency
    /// services.
    pub fn default_rules() -> Self {
        Self {
            rules: vec![ThresholdRule {
                metric: "temperature_c".into(),
                comparator: Comparator::Above,
                threshold: 60.0,
                unit: "C".into(),
                severity: Severity::High,
                targets: vec![OrgRole::EmergencyService],
            }],
        }
    }

    pub fn rules(&self) -> &[ThresholdRule] {
        &self.rules
    }

    /// Alert for the first rule, in declaration order, that matches.
    pub fn evaluate(&self, entry: &DataEntry, source: EntryRef) -> Option<RiskAlert> {
        let rule = self.rules.iter().find(|r| r.matches(entry))?;
        Some(RiskAlert {
            device_id: entry.device_id,
            metric: entry.metric.clone(),
            observed: entry.value,
            comparator: rule.comparator,
            threshold: rule.threshold,
            unit: rule.unit.clone(),
            severity: rule.severity,
            targets: rule.targets.clone(),
            source,
        })
    }

    /// Adds notification targets to every rule for `metric`. Adding a role
    /// that is already present changes nothing.
    pub fn register_contacts(&mut self, metric: &str, roles: &[&str]) -> Result<(), RiskError> {
        if roles.is_empty() {
            return Err(RiskError::UnknownRole("empty target list".into()));
        }
        let parsed = roles
            .iter()
            .map(|r| OrgRole::from_str(r).map_err(RiskError::UnknownRole))
            .collect::<Result<Vec<_>, _>>()?;
        let mut touched = false;
        for rule in self.rules.iter_mut().filter(|r| r.metric == metric) {
            let mut seen: BTreeSet<OrgRole> = rule.targets.iter().copied().collect();
            for role in &parsed {
                if seen.insert(*role) {
                    rule.targets.push(*role);
                }
            }
            touched = true;
        }
        if touched {
            Ok(())
        } else {
            Err(RiskError::UnknownMetric(metric.to_owned()))
        }
    }
}
