//! The `sdb` command line.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sdb_console::ConsoleHandle;
use sdb_core::diagnostics::{
    diagnose, DiagnosticConfig, DiagnosticsError, FailureCase, ReplayOutcome,
};
use sdb_core::observability::{RowKind, TraceStore};
use sdb_core::sdb::{propose, ModelVersion};
use sdb_core::selector::{
    contrast_table, emit_adr, select, AdrRecord, SelectorConfig, WorkloadProfile,
};
use sdb_core::{record, Scalar};

use crate::agents::{drafter_config, keyed};
use crate::config::SimulationConfig;
use crate::engine::run_simulation;
use crate::injection::{diagnosis_accuracy, DEFAULT_K};
use crate::replay::replay_demo;
use crate::report::terminal_map;
use crate::telco::{load_telco, telco_path};

pub const RENEWAL_PROFILE: &str = include_str!("../profiles/renewal.toml");
pub const DEFAULT_DATE: &str = "2026-10-15";

#[derive(Debug, Parser)]
#[command(
    name = "sdb",
    version,
    about = "Runtime patterns for agents with a stochastic proposer"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the selector over workload profiles and print the decision record.
    Select {
        /// Profile file (TOML, or JSON by extension). Repeat for a contrast table.
        #[arg(long, required = true)]
        profile: Vec<PathBuf>,
        #[arg(long, default_value = "v1")]
        model_version: String,
        #[arg(long, default_value = DEFAULT_DATE)]
        date: String,
        #[arg(long)]
        json: bool,
    },
    /// Run the renewal workload with the console serving alongside.
    Simulate {
        #[arg(long, default_value_t = 100)]
        scenarios: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Telco churn CSV; falls back to $TELCO_CSV, then the bundled fixture.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for trace.jsonl, audit.jsonl and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:0")]
        bind: SocketAddr,
        /// Do not start the console (the run then refuses to start).
        #[arg(long)]
        offline: bool,
        #[arg(long, default_value = "v1")]
        model_version: ModelVersion,
    },
    /// Classify the failed renewals of a recorded trace.
    Diagnose {
        #[arg(long)]
        trace: PathBuf,
        /// Model versions available for replay, comma separated.
        #[arg(long, default_value = "v1,v2", value_delimiter = ',')]
        versions: Vec<ModelVersion>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Replay one input log under two model versions.
    Replay {
        #[arg(long, default_value = "v1,v2", value_delimiter = ',', num_args = 1)]
        versions: Vec<ModelVersion>,
        #[arg(long, default_value_t = 1000)]
        inputs: usize,
        #[arg(long, default_value_t = 0.2)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Score diagnose against injected failures of each class.
    Inject {
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: u32,
    },
    /// Serve the console over a slowed-down run until stdin closes.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 100)]
        scenarios: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Wall-clock milliseconds per simulated day.
        #[arg(long, default_value_t = 1000)]
        tick_ms: u64,
    },
}

/// Parses and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

type CliResult = Result<(), (i32, String)>;

fn usage(e: impl std::fmt::Display) -> (i32, String) {
    (1, e.to_string())
}

pub fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Select {
            profile,
            model_version,
            date,
            json,
        } => cmd_select(&profile, &model_version, &date, json),
        Cmd::Simulate {
            scenarios,
            seed,
            csv,
            out,
            bind,
            offline,
            model_version,
        } => {
            let cfg = SimulationConfig {
                scenario_count: scenarios,
                seed,
                model_version,
                ..SimulationConfig::default()
            };
            let console = if offline {
                ConsoleHandle::offline()
            } else {
                ConsoleHandle::start(bind).map_err(|e| (2, e.to_string()))?
            };
            if let Some(url) = console.base_url() {
                println!("console: {url}");
            }
            simulate(&cfg, csv.as_deref(), out.as_deref(), &console)
        }
        Cmd::Diagnose {
            trace,
            versions,
            k,
            seed,
        } => cmd_diagnose(&trace, versions, k, seed),
        Cmd::Replay {
            versions,
            inputs,
            delta,
            sigma,
            seed,
        } => {
            let [a, b] = versions[..] else {
                return Err(usage(format!(
                    "--versions takes exactly two versions, got {}",
                    versions.len()
                )));
            };
            let d = replay_demo(inputs, a, b, sigma, delta, seed).map_err(usage)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&d).expect("serializable")
            );
            Ok(())
        }
        Cmd::Inject { runs, k } => {
            let acc = diagnosis_accuracy(runs, k).map_err(usage)?;
            for (class, a) in &acc {
                println!(
                    "{:<18} {}/{} ({:.1}%)",
                    format!("{class:?}"),
                    a.correct,
                    a.runs,
                    100.0 * a.rate()
                );
            }
            Ok(())
        }
        Cmd::Serve {
            bind,
            scenarios,
            seed,
            csv,
            tick_ms,
        } => {
            let cfg = SimulationConfig {
                scenario_count: scenarios,
                seed,
                tick_delay_ms: tick_ms,
                ..SimulationConfig::default()
            };
            let console = ConsoleHandle::start(bind).map_err(|e| (2, e.to_string()))?;
            println!("console: {}", console.base_url().unwrap_or_default());
            simulate(&cfg, csv.as_deref(), None, &console)?;
            println!("run finished; serving until stdin closes");
            let _ = std::io::copy(&mut std::io::stdin().lock(), &mut std::io::sink());
            console.shutdown();
            Ok(())
        }
    }
}

pub fn renewal_adr(model_version: ModelVersion, date: &str) -> AdrRecord {
    let p = WorkloadProfile::from_toml(RENEWAL_PROFILE).expect("bundled profile parses");
    let d = select(&p, &SelectorConfig::default()).expect("bundled profile is consistent");
    emit_adr(&p, &d, &model_version.to_string(), date)
}

fn cmd_select(paths: &[PathBuf], model_version: &str, date: &str, json: bool) -> CliResult {
    let mut adrs = Vec::new();
    for p in paths {
        let profile = WorkloadProfile::load(p).map_err(usage)?;
        let d = select(&profile, &SelectorConfig::default()).map_err(usage)?;
        adrs.push(emit_adr(&profile, &d, model_version, date));
    }
    let mut out = std::io::stdout().lock();
    for a in &adrs {
        let text = if json { a.to_json() } else { a.to_table() };
        let _ = writeln!(out, "{text}");
    }
    if adrs.len() > 1 && !json {
        let _ = writeln!(out, "{}", contrast_table(&adrs));
    }
    Ok(())
}

fn simulate(
    cfg: &SimulationConfig,
    csv: Option<&Path>,
    out: Option<&Path>,
    console: &ConsoleHandle,
) -> CliResult {
    let path = telco_path(csv);
    let scenarios = load_telco(&path, cfg.scenario_count, cfg.seed).map_err(usage)?;
    console.set_adr(renewal_adr(cfg.model_version, DEFAULT_DATE));
    let outcome =
        run_simulation(&scenarios, cfg, console).map_err(|e| (e.exit_code(), e.to_string()))?;
    print!("{}", outcome.report.summary());
    if let Some(dir) = out {
        let io = |e: std::io::Error| (2, format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut trace =
            std::io::BufWriter::new(std::fs::File::create(dir.join("trace.jsonl")).map_err(io)?);
        outcome.trace.write_jsonl(&mut trace).map_err(io)?;
        trace.flush().map_err(io)?;
        outcome
            .audit
            .write_jsonl(std::fs::File::create(dir.join("audit.jsonl")).map_err(io)?)
            .map_err(io)?;
        let report = serde_json::to_string_pretty(&outcome.report).expect("serializable");
        std::fs::write(dir.join("report.json"), report).map_err(io)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

/// Failed renewals in `trace` become cases. A replay re-drafts the offer
/// under the given version; the failure reproduces when the drafter lands on
/// the same offer that preceded it.
fn cmd_diagnose(path: &Path, versions: Vec<ModelVersion>, k: u32, seed: u64) -> CliResult {
    let file = std::fs::File::open(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let trace = TraceStore::read_jsonl(std::io::BufReader::new(file)).map_err(usage)?;
    let cfg = DiagnosticConfig::new(k, versions).map_err(usage)?;
    let defaults = SimulationConfig::default();
    let drafter = drafter_config(defaults.proposer_sigma, defaults.divergence_rate_delta);

    let mut cases = Vec::new();
    let mut drafted = std::collections::BTreeMap::new();
    for (rid, (terminal, _)) in terminal_map(trace.rows()) {
        if terminal != "escalated" {
            continue;
        }
        let rows = trace.for_request(&rid);
        let class = rows
            .iter()
            .find(|r| r.kind == RowKind::RenewalOpened)
            .and_then(|r| r.text("class").map(str::to_owned));
        let strategy = rows.iter().find(|r| r.kind == RowKind::StrategyGenerated);
        let (Some(class), Some(s)) = (class, strategy) else {
            continue;
        };
        let mv = s.model_version.unwrap_or(defaults.model_version);
        drafted.insert(
            rid.clone(),
            (
                class,
                s.text("offer").unwrap_or("").to_owned(),
                s.int("discount_pct").unwrap_or(0),
            ),
        );
        cases.push(FailureCase {
            request_id: rid,
            model_version: mv,
            trace: rows,
        });
    }
    if cases.is_empty() {
        println!("no failed renewals in {}", path.display());
        return Ok(());
    }
    let report = diagnose(
        &cases,
        |case, v, rep| {
            let (class, offer, discount) = &drafted[&case.request_id];
            let input =
                record! { "request_id" => case.request_id.as_str(), "class" => class.as_str() };
            let p = propose(
                &input,
                &drafter,
                keyed(seed, "diagnose", &case.request_id, u64::from(rep)),
                v,
            );
            let same = p.content.get("offer").and_then(Scalar::as_text) == Some(offer.as_str())
                && p.content.get("discount_pct").and_then(Scalar::as_int) == Some(*discount);
            if same {
                ReplayOutcome::Fail
            } else {
                ReplayOutcome::Pass
            }
        },
        &cfg,
    );
    match report {
        Ok(r) => {
            println!("{}", r.summary());
            if let sdb_core::diagnostics::Diagnosis::Functional { signatures } = &r.diagnosis {
                for s in signatures {
                    println!(
                        "  {} [{:?}] {}: {}",
                        s.signature_id, s.pattern, s.window.evidence, s.correction
                    );
                }
            }
            Ok(())
        }
        Err(e @ DiagnosticsError::ReplayUnavailable(_)) => {
            Err((1, format!("{e}; pass at least two --versions")))
        }
        Err(e) => Err(usage(e)),
    }
}
