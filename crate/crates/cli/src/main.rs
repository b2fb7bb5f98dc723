//! `onboard`: run the onboarding demo, attack scripts, adversarial
//! campaigns, the ledger load sweep, and snapshot verification.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success (for `attack`: the attack was defeated) |
//! | 1 | the operation ran but did not reach its goal |
//! | 2 | bad command line |
//! | 3 | ledger snapshot is corrupt |
//! | 4 | file missing or unreadable/unwritable |
//! | 5 | a security lemma was violated |
//! | 6 | invalid configuration, script, or parameters |

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use onboard_core::config::{Config, ConfigError};
use onboard_core::demo::{run_demo, DemoError};
use onboard_core::harness::{
    builtin_script, builtin_scripts, explore, run_attack, AttackScript, CampaignConfig, CampaignSummary, Expectation,
    Scenario, ScriptError, Weights,
};
use onboard_core::ledger::{Ledger, SnapshotError};
use onboard_core::loadgen::{parse_rates, sweep, ArrivalProcess, LoadProfile};

mod exit {
    pub const FAILED: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CORRUPT: u8 = 3;
    pub const IO: u8 = 4;
    pub const VIOLATION: u8 = 5;
    pub const CONFIG: u8 = 6;
}

#[derive(Debug, Parser)]
#[command(name = "onboard", version, about = "Decentralized IoT onboarding simulator")]
struct Cli {
    /// TOML config file; ONBOARD_<SECTION>__<KEY> variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Onboard, report, alert, and revoke one device, printing each step.
    Demo(DemoArgs),
    /// Run one attack script against honest parties.
    Attack(AttackArgs),
    /// Run many seeded random-adversary traces and check the lemmas.
    Campaign(CampaignArgs),
    /// Enumerate every adversary schedule of a small scenario.
    Explore(ExploreArgs),
    /// Sweep offered load against the simulated orderer.
    Bench(BenchArgs),
    /// Check every hash chain in a ledger snapshot.
    VerifyLedger(VerifyArgs),
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Write the ledger snapshot here (defaults to `snapshot` from the config).
    #[arg(long, value_name = "PATH")]
    snapshot: Option<PathBuf>,
    /// Also write the transcript to this file.
    #[arg(long, value_name = "PATH")]
    transcript: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    /// Built-in script name or path to a JSON script.
    #[arg(long, required_unless_present = "list")]
    script: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// List built-in scripts and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    #[arg(long, default_value_t = 1000)]
    runs: u64,
    /// First seed; run k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Adversary action weights, e.g. "deliver=8,drop=1,replay=2,inject=2".
    #[arg(long)]
    weights: Option<Weights>,
    /// Adversary actions per run before it turns passive.
    #[arg(long, default_value_t = 40)]
    budget: u32,
    /// Authenticator/device pairs per run.
    #[arg(long, default_value_t = 2)]
    pairs: u32,
    /// Write one JSON record per run (seed, verdicts, trace digest) here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExploreArgs {
    #[arg(long, default_value_t = 1)]
    pairs: u32,
    #[arg(long, default_value_t = 1)]
    max_replays: u32,
    #[arg(long, default_value_t = 12)]
    max_messages: usize,
    #[arg(long, default_value_t = 200_000)]
    max_paths: u64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// `start:end:step` or a comma-separated list, in tx/s.
    #[arg(long, default_value = "30:300:25")]
    rates: String,
    /// Orderer service rate, tx/s (defaults to `ledger.mu` from the config).
    #[arg(long)]
    mu: Option<f64>,
    /// Simulated seconds per rate.
    #[arg(long, default_value_t = 30.0)]
    duration: f64,
    #[arg(long, default_value_t = ArrivalProcess::Uniform)]
    arrival: ArrivalProcess,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "PATH", default_value = "results.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Snapshot file (defaults to `snapshot` from the config).
    path: Option<PathBuf>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = if matches!(e, ConfigError::Io { .. }) { exit::IO } else { exit::CONFIG };
        Failure::new(code, e.to_string())
    }
}

impl From<ScriptError> for Failure {
    fn from(e: ScriptError) -> Self {
        let code = if matches!(e, ScriptError::Io { .. }) { exit::IO } else { exit::CONFIG };
        Failure::new(code, e.to_string())
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(exit::IO, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn cmd_demo(cfg: &Config, args: DemoArgs) -> Result<u8, Failure> {
    let mut cfg = cfg.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = run_demo(&cfg).map_err(|e| match e {
        DemoError::Config(c) => Failure::from(c),
        other => Failure::new(exit::CONFIG, other.to_string()),
    })?;
    let text = out.transcript_text();
    print!("{text}");
    if let Some(path) = &args.transcript {
        write_file(path, &text)?;
    }
    if let Some(path) = args.snapshot.as_ref().or(cfg.snapshot.as_ref()) {
        write_file(path, &out.snapshot)?;
        println!("snapshot written to {}", path.display());
    }
    if !out.verdicts.all_hold() {
        return Err(Failure::new(exit::VIOLATION, format!("lemma violated: {:?}", out.verdicts)));
    }
    match out.failed_step {
        None => {
            println!("demo complete: all steps succeeded");
            Ok(0)
        }
        Some(step) => {
            let why = out.rejections.first().map(|c| format!(" ({c})")).unwrap_or_default();
            Err(Failure::new(exit::FAILED, format!("demo failed at step `{step}`{why}")))
        }
    }
}

fn cmd_attack(cfg: &Config, args: AttackArgs) -> Result<u8, Failure> {
    if args.list {
        for s in builtin_scripts() {
            println!("{:<28} {}", s.name, s.description);
        }
        return Ok(0);
    }
    let name = args.script.expect("clap enforces --script");
    let script = match builtin_script(&name) {
        Ok(s) => s,
        Err(ScriptError::UnknownBuiltin(_)) if Path::new(&name).exists() => AttackScript::load(Path::new(&name))?,
        Err(ScriptError::UnknownBuiltin(_)) => {
            return Err(Failure::new(exit::IO, format!("no built-in script or file named `{name}`")))
        }
        Err(e) => return Err(e.into()),
    };
    let report = run_attack(&script, cfg.protocol_config()?, args.seed.unwrap_or(cfg.seed))?;
    if let Some(path) = &args.out {
        write_file(path, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    if !report.verdicts.all_hold() || report.forged_registrations > 0 {
        return Err(Failure::new(
            exit::VIOLATION,
            format!(
                "attack succeeded: {} forged registrations, verdicts {:?}",
                report.forged_registrations, report.verdicts
            ),
        ));
    }
    if !report.defeated {
        return Err(Failure::new(exit::FAILED, format!("{}: {}", script.name, report.failure.unwrap_or_default())));
    }
    match &report.expect {
        Expectation::Rejected { code } => println!("rejected: {}", code.replace('-', " ")),
        Expectation::Stalled => println!("stalled: no device became active"),
    }
    println!("attack `{}` defeated (trace {})", report.name, report.trace_digest);
    Ok(0)
}

fn cmd_campaign(cfg: &Config, args: CampaignArgs) -> Result<u8, Failure> {
    let mut campaign = CampaignConfig {
        runs: args.runs,
        seed: args.seed.unwrap_or(cfg.seed),
        budget: args.budget,
        ..CampaignConfig::default()
    };
    campaign.scenario.pairs = args.pairs;
    if let Some(w) = args.weights {
        campaign.weights = w;
    }
    let records = onboard_core::harness::run_campaign(&campaign, &cfg.protocol_config()?)
        .map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?;
    if let Some(path) = &args.out {
        let file = File::create(path).map_err(|e| io_failure(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &records {
            serde_json::to_writer(&mut w, r).map_err(|e| io_failure(path, e))?;
            writeln!(w).map_err(|e| io_failure(path, e))?;
        }
        w.flush().map_err(|e| io_failure(path, e))?;
    }
    let s = CampaignSummary::from_records(&records);
    println!("{} violations / {} runs", s.violating_runs, s.runs);
    println!(
        "  authentication {}  token-integrity {}  confidentiality {}",
        s.authentication_violations, s.token_integrity_violations, s.confidentiality_violations
    );
    println!(
        "  registrations {}  rejections {}  injected frames {}  exhausted runs {}",
        s.registrations, s.rejections, s.injected, s.exhausted
    );
    if s.violating_runs > 0 {
        return Err(Failure::new(exit::VIOLATION, format!("violating seeds: {:?}", s.failing_seeds)));
    }
    if s.exhausted > 0 {
        return Err(Failure::new(exit::FAILED, format!("{} runs hit the step bound", s.exhausted)));
    }
    Ok(0)
}

fn cmd_explore(cfg: &Config, args: ExploreArgs) -> Result<u8, Failure> {
    let scenario = Scenario { pairs: args.pairs, ..Scenario::default() };
    let s = explore(
        &scenario,
        &cfg.protocol_config()?,
        args.seed.unwrap_or(cfg.seed),
        args.max_replays,
        args.max_messages,
        args.max_paths,
    )
    .map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?;
    println!("{} violations / {} paths ({})", s.violations, s.paths, if s.complete { "complete" } else { "truncated" });
    if let Some(path) = s.first_violation {
        return Err(Failure::new(exit::VIOLATION, format!("first violating schedule: {path:?}")));
    }
    if !s.complete {
        return Err(Failure::new(exit::FAILED, "path limit reached before the search finished"));
    }
    Ok(0)
}

fn cmd_bench(cfg: &Config, args: BenchArgs) -> Result<u8, Failure> {
    let rates = parse_rates(&args.rates).map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?;
    let template = LoadProfile {
        arrival_rate: rates[0],
        duration_s: args.duration,
        arrival: args.arrival,
        service_rate: args.mu.unwrap_or(cfg.ledger.mu),
        seed: args.seed.unwrap_or(cfg.seed),
        ..LoadProfile::default()
    };
    let report =
        sweep(&rates, &template, &cfg.ledger_config()?).map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?;
    let file = File::create(&args.out).map_err(|e| io_failure(&args.out, e))?;
    report.write_csv(BufWriter::new(file)).map_err(|e| io_failure(&args.out, e))?;
    println!("{:>8} {:>10} {:>10} {:>10} {:>10} {:>10}", "rate", "tx/s", "mean ms", "p50", "p95", "p99");
    for r in &report.rows {
        println!(
            "{:>8.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>10.1}",
            r.rate, r.throughput, r.mean_ms, r.p50, r.p95, r.p99
        );
    }
    match report.knee(2.0) {
        Some(k) => println!("latency knee at {k} tx/s (mu = {})", template.service_rate),
        None => println!("no latency knee in this range (mu = {})", template.service_rate),
    }
    println!("CSV written to {}", args.out.display());
    Ok(0)
}

fn cmd_verify(cfg: &Config, args: VerifyArgs) -> Result<u8, Failure> {
    let path = args
        .path
        .or_else(|| cfg.snapshot.clone())
        .ok_or_else(|| Failure::new(exit::USAGE, "no snapshot path given and none configured"))?;
    let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
    let ledger = Ledger::restore(&text, cfg.ledger_config()?).map_err(|e| {
        let at = match &e {
            SnapshotError::Chain(c) => format!("block height {}", c.height),
            SnapshotError::Line { line, .. } => format!("line {line}"),
        };
        Failure::new(exit::CORRUPT, format!("ledger corrupt at {at}: {e}"))
    })?;
    ledger
        .verify_all()
        .map_err(|e| Failure::new(exit::CORRUPT, format!("ledger corrupt at block height {}: {e}", e.height)))?;
    let blocks: usize = text.lines().filter(|l| !l.trim().is_empty()).count();
    println!("ledger ok: {blocks} blocks verified");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = Config::load(cli.config.as_deref()).map_err(Failure::from).and_then(|cfg| match cli.command {
        Command::Demo(a) => cmd_demo(&cfg, a),
        Command::Attack(a) => cmd_attack(&cfg, a),
        Command::Campaign(a) => cmd_campaign(&cfg, a),
        Command::Explore(a) => cmd_explore(&cfg, a),
        Command::Bench(a) => cmd_bench(&cfg, a),
        Command::VerifyLedger(a) => cmd_verify(&cfg, a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
