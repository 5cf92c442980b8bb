//! The `shielda` command line.
//!
//! Exit codes: 0 ok, 1 replay divergence, 2 mission terminated, 3
//! unclassified or escalation pending, 64 usage, 65 invalid input data,
//! 74 I/O failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::agentops::{read_log_file, replay, LogError};
use crate::classifier::{RawExceptionSignal, SignalOrigin};
use crate::data::{Catalog, DataError};
use crate::escalation::{root_cause_trace, seeds_for, ExtractorSet};
use crate::registry::load_registry;
use crate::simharness::{load_scenario, run_scenario, RunConfig};
use crate::taxonomy::{ArtifactKind, Phase};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIVERGENCE: i32 = 1;
pub const EXIT_TERMINATED: i32 = 2;
pub const EXIT_PENDING: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Human,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "shielda", version, about = "Exception classification and recovery for agentic workflows")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
    /// Directory holding taxonomy.json, registry.json and rules.json.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Escalation sink: human or drop.
    #[arg(long, global = true, default_value = "human")]
    sink: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect the exception taxonomy.
    Taxonomy {
        #[command(subcommand)]
        command: TaxonomyCommand,
    },
    /// Inspect or validate handler patterns.
    Patterns {
        #[command(subcommand)]
        command: PatternsCommand,
    },
    /// Classify one exception signal.
    Classify {
        #[arg(long)]
        message: String,
        #[arg(long, default_value = "Internal")]
        origin: SignalOrigin,
        #[arg(long)]
        phase_hint: Option<Phase>,
        /// Structured field, repeatable.
        #[arg(long = "field", value_name = "K=V", value_parser = parse_field)]
        fields: Vec<(String, String)>,
    },
    /// Run a built-in or file-based scenario.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        log: Option<PathBuf>,
        /// JSONL file the human sink appends to.
        #[arg(long)]
        queue: Option<PathBuf>,
    },
    /// Trace an event in a log back to its root cause.
    Trace {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        event: u64,
    },
    /// Re-derive every decision in a log and report divergences.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum TaxonomyCommand {
    List {
        #[arg(long)]
        phase: Option<Phase>,
        #[arg(long)]
        artifact: Option<ArtifactKind>,
    },
}

#[derive(Debug, Subcommand)]
enum PatternsCommand {
    List,
    Show { id: String },
    Validate { file: PathBuf },
}

fn parse_field(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected K=V, got `{s}`")),
    }
}

/// Exit code plus what goes to stdout and stderr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dispatch {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Dispatch {
    fn out(code: i32, stdout: String) -> Self {
        Self {
            code,
            stdout,
            stderr: String::new(),
        }
    }

    fn err(code: i32, stderr: String) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr,
        }
    }
}

/// `argv` includes the program name.
pub fn dispatch<I, T>(argv: I) -> Dispatch
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Dispatch::out(EXIT_OK, text),
                _ => Dispatch::err(EXIT_USAGE, text),
            };
        }
    };
    let catalog = match Catalog::resolve(cli.data_dir.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            let code = if matches!(e, DataError::Io { .. }) { EXIT_IO } else { EXIT_DATA };
            return Dispatch::err(code, format!("error: {e}\n"));
        }
    };
    let fmt = cli.format;
    match cli.command {
        Command::Taxonomy {
            command: TaxonomyCommand::List { phase, artifact },
        } => taxonomy_list(&catalog, fmt, phase, artifact),
        Command::Patterns { command } => match command {
            PatternsCommand::List => patterns_list(&catalog, fmt),
            PatternsCommand::Show { id } => patterns_show(&catalog, fmt, &id),
            PatternsCommand::Validate { file } => patterns_validate(&catalog, fmt, &file),
        },
        Command::Classify {
            message,
            origin,
            phase_hint,
            fields,
        } => classify(&catalog, message, origin, phase_hint, fields),
        Command::Run {
            scenario,
            seed,
            log,
            queue,
        } => run(&catalog, fmt, &cli.sink, &scenario, seed, log, queue),
        Command::Trace { log, event } => trace(&catalog, fmt, &log, event),
        Command::Replay { log } => replay_log(&catalog, fmt, &log),
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn log_error(e: LogError) -> Dispatch {
    let code = if matches!(e, LogError::Io(_)) { EXIT_IO } else { EXIT_DATA };
    Dispatch::err(code, format!("error: {e}\n"))
}

fn taxonomy_list(catalog: &Catalog, fmt: OutputFormat, phase: Option<Phase>, artifact: Option<ArtifactKind>) -> Dispatch {
    let entries = catalog.taxonomy.query(phase, artifact);
    if fmt == OutputFormat::Json {
        return Dispatch::out(EXIT_OK, to_json(&entries));
    }
    let mut out = format!("{:<40} {:<16} {:<5} {}\n", "ID", "ARTIFACT", "PHASE", "NAME");
    for e in &entries {
        let _ = writeln!(out, "{:<40} {:<16} {:<5} {}", e.id, e.artifact.name(), e.phase.label(), e.display_name);
    }
    let _ = writeln!(out, "{} entries", entries.len());
    Dispatch::out(EXIT_OK, out)
}

fn patterns_list(catalog: &Catalog, fmt: OutputFormat) -> Dispatch {
    let patterns = catalog.registry.patterns();
    if fmt == OutputFormat::Json {
        return Dispatch::out(EXIT_OK, to_json(&patterns));
    }
    let mut out = String::new();
    for p in patterns {
        let _ = writeln!(out, "{}  {:<32} {:<9} {}", p.pattern_id, p.local_label, p.flow.name(), p.recovery.name());
    }
    Dispatch::out(EXIT_OK, out)
}

fn patterns_show(catalog: &Catalog, fmt: OutputFormat, id: &str) -> Dispatch {
    let Some(p) = catalog.registry.get(id) else {
        return Dispatch::err(EXIT_DATA, format!("error: no pattern `{id}`\n"));
    };
    match fmt {
        OutputFormat::Json => Dispatch::out(EXIT_OK, to_json(p)),
        OutputFormat::Human => {
            let mapped: Vec<&str> = catalog
                .registry
                .mapping()
                .iter()
                .filter(|(_, v)| v.as_str() == id)
                .map(|(k, _)| k.as_str())
                .collect();
            let mut out = format!(
                "{}\n  local:    {}\n  flow:     {}\n  recovery: {}\n",
                p.pattern_id,
                p.local_label,
                p.flow.name(),
                p.recovery.name()
            );
            if !mapped.is_empty() {
                let _ = writeln!(out, "  handles:  {}", mapped.join(", "));
            }
            Dispatch::out(EXIT_OK, out)
        }
    }
}

fn patterns_validate(catalog: &Catalog, fmt: OutputFormat, file: &std::path::Path) -> Dispatch {
    let source = match std::fs::File::open(file) {
        Ok(f) => f,
        Err(e) => return Dispatch::err(EXIT_IO, format!("error: cannot read {}: {e}\n", file.display())),
    };
    let (code, report) = match load_registry(std::io::BufReader::new(source), &catalog.taxonomy) {
        Ok(r) => (EXIT_OK, json!({"valid": true, "patterns": r.len()})),
        Err(e) => (EXIT_DATA, json!({"valid": false, "error": e.to_string()})),
    };
    let text = match fmt {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Human if code == EXIT_OK => format!("valid: {} patterns\n", report["patterns"]),
        OutputFormat::Human => format!("invalid: {}\n", report["error"].as_str().unwrap_or_default()),
    };
    Dispatch::out(code, text)
}

fn classify(
    catalog: &Catalog,
    message: String,
    origin: SignalOrigin,
    phase_hint: Option<Phase>,
    fields: Vec<(String, String)>,
) -> Dispatch {
    let mut signal = match RawExceptionSignal::new(message, origin, "cli") {
        Ok(s) => s,
        Err(e) => return Dispatch::err(EXIT_USAGE, format!("error: {e}\n")),
    };
    signal.source_phase_hint = phase_hint;
    signal.structured_fields = fields.into_iter().collect::<BTreeMap<_, _>>();
    let c = catalog.rules.classify(&signal);
    let code = if c.exception_id.is_unclassified() { EXIT_PENDING } else { EXIT_OK };
    Dispatch::out(code, to_json(&c))
}

fn run(
    catalog: &Catalog,
    fmt: OutputFormat,
    sink: &str,
    scenario: &str,
    seed: Option<u64>,
    log: Option<PathBuf>,
    queue: Option<PathBuf>,
) -> Dispatch {
    let scenario = match load_scenario(scenario) {
        Ok(s) => s,
        Err(e) => return Dispatch::err(EXIT_DATA, format!("error: {e}\n")),
    };
    let config = RunConfig {
        seed,
        log_path: log,
        sink: sink.to_string(),
        queue_path: queue,
        ..RunConfig::default()
    };
    let report = match run_scenario(&scenario, catalog, &config) {
        Ok(r) => r,
        Err(e) => {
            let code = match e {
                crate::simharness::RunError::Sink(crate::escalation::SinkError::Unknown(_)) => EXIT_USAGE,
                crate::simharness::RunError::Config(_) => EXIT_DATA,
                _ => EXIT_IO,
            };
            return Dispatch::err(code, format!("error: {e}\n"));
        }
    };
    let code = report.final_status.exit_code();
    let text = match fmt {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Human => {
            let mut out = format!("{}: {}\n", report.mission_id, report.final_status.name());
            let _ = writeln!(out, "  events: {}  threads: {}  escalations: {}", report.events.len(), report.threads, report.escalation_depth);
            for o in &report.outcomes {
                let _ = writeln!(out, "  {} -> {:?} after {} attempt(s)", o.pattern_id, o.status, o.attempts_used);
            }
            if let Some(r) = &report.termination_reason {
                let _ = writeln!(out, "  reason: {r}");
            }
            if let Some(p) = &report.log_path {
                let _ = writeln!(out, "  log: {}", p.display());
            }
            out
        }
    };
    Dispatch::out(code, text)
}

fn trace(catalog: &Catalog, fmt: OutputFormat, log: &std::path::Path, event: u64) -> Dispatch {
    let events = match read_log_file(log) {
        Ok(e) => e,
        Err(e) => return log_error(e),
    };
    let Some(symptom) = crate::agentops::log::get(&events, event) else {
        return Dispatch::err(EXIT_DATA, format!("error: no event {event} in {}\n", log.display()));
    };
    let signal = RawExceptionSignal::from_event(symptom);
    let seeds = seeds_for(&signal.message, symptom, &ExtractorSet::shipped());
    let chain = match root_cause_trace(&events, event, &seeds) {
        Ok(c) => c,
        Err(e) => return Dispatch::err(EXIT_DATA, format!("error: {e}\n")),
    };
    let prior = catalog.rules.classify(&signal);
    let revised = catalog.rules.reclassify(&prior, &chain);
    let reclassification: Option<Value> = (revised.exception_id != prior.exception_id).then(|| {
        let pattern = catalog.registry.resolve(&revised.exception_id);
        json!({"classification": revised, "pattern": pattern})
    });
    match fmt {
        OutputFormat::Json => Dispatch::out(
            EXIT_OK,
            to_json(&json!({
                "symptom_seq": event,
                "seeds": seeds,
                "chain": chain,
                "root_seq": chain.root_seq(),
                "prior": prior,
                "reclassification": reclassification,
            })),
        ),
        OutputFormat::Human => {
            let mut out = format!("chain from event {event} (root {}):\n", chain.root_seq());
            for link in &chain.links {
                let e = crate::agentops::log::get(&events, link.event_seq).expect("chain seqs come from the log");
                let shared: Vec<String> = link.shared_entities.iter().map(|s| s.value().to_string()).collect();
                let _ = writeln!(out, "  {:>5} {:<2} {:<18} [{}]", e.seq, phase_tag(e.phase), e.kind.name(), shared.join(", "));
            }
            if !chain.cross_mission_refs.is_empty() {
                let _ = writeln!(out, "  other missions mention these entities at {:?}", chain.cross_mission_refs);
            }
            let _ = writeln!(out, "classified: {}", prior.exception_id);
            match reclassification {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "reclassified: {} -> {}",
                        revised.exception_id,
                        r["pattern"]["id"].as_str().unwrap_or("?")
                    );
                }
                None => out.push_str("reclassified: (no change)\n"),
            }
            Dispatch::out(EXIT_OK, out)
        }
    }
}

fn phase_tag(p: crate::agentops::LogPhase) -> &'static str {
    match p {
        crate::agentops::LogPhase::RP => "RP",
        crate::agentops::LogPhase::E => "E",
    }
}

fn replay_log(catalog: &Catalog, fmt: OutputFormat, log: &std::path::Path) -> Dispatch {
    let events = match read_log_file(log) {
        Ok(e) => e,
        Err(e) => return log_error(e),
    };
    let trace = match replay(&events, &catalog.registry, &catalog.rules) {
        Ok(t) => t,
        Err(e) => return Dispatch::err(EXIT_DATA, format!("error: {e}\n")),
    };
    let code = if trace.is_clean() { EXIT_OK } else { EXIT_DIVERGENCE };
    let text = match fmt {
        OutputFormat::Json => to_json(&json!({
            "decisions": trace.decisions,
            "divergences": trace.divergences(),
            "clean": trace.is_clean(),
        })),
        OutputFormat::Human => {
            let mut out = format!("{} decisions replayed, {} divergent\n", trace.decisions.len(), trace.divergences().len());
            for d in trace.divergences() {
                let _ = writeln!(out, "  seq {} {}: recorded `{}`, derived `{}`", d.seq, d.kind, d.recorded, d.derived);
            }
            out
        }
    };
    Dispatch::out(code, text)
}
