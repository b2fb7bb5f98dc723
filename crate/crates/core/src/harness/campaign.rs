//! Many seeded runs under a randomized adversary, and bounded exhaustive
//! exploration of small configurations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::roles::ProtocolConfig;

use super::strategy::{Enumerator, RandomStrategy, Weights};
use super::{ReportSpec, Scenario, ScenarioError, Verdicts, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignConfig {
    pub runs: u64,
    /// Run `k` uses seed `seed + k`.
    pub seed: u64,
    pub scenario: Scenario,
    pub weights: Weights,
    /// Adversary decisions per run before it turns passive.
    pub budget: u32,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            runs: 1000,
            seed: 0,
            scenario: Scenario {
                pairs: 2,
                reports: vec![ReportSpec { metric: "temperature_c".into(), value: 21.5, unit: "C".into() }],
                ..Scenario::default()
            },
            weights: Weights::default(),
            budget: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub verdicts: Verdicts,
    /// Attacker-made device ids that registered; must be zero.
    pub forged_registrations: usize,
    pub trace_digest: String,
    pub events: usize,
    pub registrations: usize,
    pub rejections: usize,
    pub injected: u32,
    pub adversary_errors: u32,
    pub exhausted: bool,
}

impl RunRecord {
    pub fn violated(&self) -> bool {
        !self.verdicts.all_hold() || self.forged_registrations > 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub runs: u64,
    pub authentication_violations: u64,
    pub token_integrity_violations: u64,
    pub confidentiality_violations: u64,
    pub forged_registrations: u64,
    /// Runs with at least one violation of any kind.
    pub violating_runs: u64,
    pub registrations: u64,
    pub rejections: u64,
    pub injected: u64,
    pub adversary_errors: u64,
    pub exhausted: u64,
    /// Up to 20 seeds of violating runs, for reproduction.
    pub failing_seeds: Vec<u64>,
}

impl CampaignSummary {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut s = CampaignSummary { runs: records.len() as u64, ..Default::default() };
        for r in records {
            s.authentication_violations += u64::from(!r.verdicts.authentication.holds);
            s.token_integrity_violations += u64::from(!r.verdicts.token_integrity.holds);
            s.confidentiality_violations += u64::from(!r.verdicts.confidentiality.holds);
            s.forged_registrations += r.forged_registrations as u64;
            s.registrations += r.registrations as u64;
            s.rejections += r.rejections as u64;
            s.injected += u64::from(r.injected);
            s.adversary_errors += u64::from(r.adversary_errors);
            s.exhausted += u64::from(r.exhausted);
            if r.violated() {
                s.violating_runs += 1;
                if s.failing_seeds.len() < 20 {
                    s.failing_seeds.push(r.seed);
                }
            }
        }
        s
    }
}

/// One randomized run.
pub fn run_one(cfg: &CampaignConfig, protocol: &ProtocolConfig, seed: u64) -> Result<RunRecord, ScenarioError> {
    let mut world = World::new(cfg.scenario.clone(), protocol.clone(), seed)?;
    let outcome = world.run(&mut RandomStrategy::new(cfg.weights, cfg.budget));
    let registered = world.registered_ids();
    Ok(RunRecord {
        seed,
        verdicts: world.verdicts(),
        forged_registrations: registered.iter().filter(|id| world.attacker().forged_ids.contains(id)).count(),
        trace_digest: world.trace().digest().to_hex(),
        events: world.trace().len(),
        registrations: registered.len(),
        rejections: world.rejections().len(),
        injected: world.attacker().injected,
        adversary_errors: outcome.adversary_errors,
        exhausted: outcome.exhausted,
    })
}

/// Runs `cfg.runs` seeds in parallel. Records come back in seed order.
pub fn run_campaign(cfg: &CampaignConfig, protocol: &ProtocolConfig) -> Result<Vec<RunRecord>, ScenarioError> {
    cfg.scenario.validate()?;
    (0..cfg.runs).into_par_iter().map(|k| run_one(cfg, protocol, cfg.seed.wrapping_add(k))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub paths: u64,
    pub violations: u64,
    /// False if `max_paths` cut the search short.
    pub complete: bool,
    /// Choice indices reproducing the first violation.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub first_violation: Option<Vec<usize>>,
}

/// Visits every adversary schedule over the first `max_messages` public
/// frames: per frame deliver, drop, duplicate or tamper, and up to
/// `max_replays` replays of any observed frame once nothing is pending.
pub fn explore(
    scenario: &Scenario,
    protocol: &ProtocolConfig,
    seed: u64,
    max_replays: u32,
    max_messages: usize,
    max_paths: u64,
) -> Result<ExploreSummary, ScenarioError> {
    scenario.validate()?;
    let mut summary = ExploreSummary { paths: 0, violations: 0, complete: false, first_violation: None };
    let mut prefix = vec![];
    while summary.paths < max_paths {
        let mut world = World::new(scenario.clone(), protocol.clone(), seed)?;
        let mut e = Enumerator::new(prefix, max_replays, max_messages);
        world.run(&mut e);
        summary.paths += 1;
        let forged = world.registered_ids().iter().any(|id| world.attacker().forged_ids.contains(id));
        if forged || !world.verdicts().all_hold() {
            summary.violations += 1;
            if summary.first_violation.is_none() {
                summary.first_violation = Some(e.taken.iter().map(|(c, _)| *c).collect());
            }
        }
        let Some(k) = e.taken.iter().rposition(|(c, n)| c + 1 < *n) else {
            summary.complete = true;
            break;
        };
        prefix = e.taken[..k].iter().map(|(c, _)| *c).collect();
        prefix.push(e.taken[k].0 + 1);
    }
    Ok(summary)
}
