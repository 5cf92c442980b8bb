#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use shielda_core::agentops::{EventKind, EventLog, LogPhase, NewEvent, WorkflowEvent};
use shielda_core::escalation::EntityRef;

/// Pattern table rows: (id, local handling, flow control, state recovery).
pub const PATTERN_TABLE: [(&str, &str, &str, &str); 48] = [
    ("P001", "Clarify Prompt", "Abort", "No-op"),
    ("P002", "Clarify Prompt", "Continue", "No-op"),
    ("P003", "Echo Validation", "Continue", "No-op"),
    ("P004", "Prompt Rewriting", "Abort", "No-op"),
    ("P005", "Prompt Sanitization", "Continue", "No-op"),
    ("P006", "Context Tagging", "Continue", "No-op"),
    ("P007", "Default Interpretation", "Continue", "No-op"),
    ("P008", "Graph Validation", "Abort", "No-op"),
    ("P009", "Recursive Checkpointing", "Abort", "No-op"),
    ("P010", "Logic Re-ranking", "Continue", "No-op"),
    ("P011", "KB Trust Scoring", "Continue", "No-op"),
    ("P012", "Plan Repair", "Abort", "No-op"),
    ("P013", "Plan Shortening", "Abort", "No-op"),
    ("P014", "Forward Checking", "Abort", "No-op"),
    ("P015", "Constraint Pruning", "Abort", "No-op"),
    ("P016", "Subgoal Reordering", "Abort", "No-op"),
    ("P017", "Abort Task Chain", "Abort", "Rollback"),
    ("P018", "Retry with Backoff", "Continue", "No-op"),
    ("P019", "Switch Tool", "Abort", "No-op"),
    ("P020", "Fallback to Alternate API", "Abort", "No-op"),
    ("P021", "Schema Validation", "Abort", "No-op"),
    ("P022", "Schema Validation", "Continue", "No-op"),
    ("P023", "Semantic Constraint Checking", "Continue", "No-op"),
    ("P024", "Oracle Verification", "Continue", "Rollback"),
    ("P025", "Output Sanitization", "Continue", "No-op"),
    ("P026", "Fallback Template", "Continue", "No-op"),
    ("P027", "Reset Memory", "Abort", "Rollback"),
    ("P028", "Memory Slot Isolation", "Continue", "No-op"),
    ("P029", "Attribute Filtering", "Continue", "Rollback"),
    ("P030", "Disentangled Prompting", "Abort", "No-op"),
    ("P031", "Response Normalization", "Continue", "No-op"),
    ("P032", "Timeout Escalation", "Skip", "Compensate"),
    ("P033", "Timeout Escalation", "Abort", "Compensate"),
    ("P034", "Low-confidence Filter", "Continue", "No-op"),
    ("P035", "Output Truncation", "Continue", "No-op"),
    ("P036", "Sampling Adjustment", "Continue", "No-op"),
    ("P037", "Escalate to Human", "Skip", "Compensate"),
    ("P038", "Escalate to Human", "Skip", "No-op"),
    ("P039", "Escalate to Human", "Abort", "Compensate"),
    ("P040", "Escalate to Human", "Abort", "No-op"),
    ("P041", "Protocol Downgrade", "Abort", "No-op"),
    ("P042", "External Call Timeout Fallback", "Skip", "Compensate"),
    ("P043", "External Call Timeout Fallback", "Skip", "No-op"),
    ("P044", "External Call Timeout Fallback", "Abort", "Compensate"),
    ("P045", "External Call Timeout Fallback", "Abort", "No-op"),
    ("P046", "Role-based Check", "Abort", "No-op"),
    ("P047", "Conflict Resolution Prompt", "Abort", "No-op"),
    ("P048", "Peer Confirmation", "Continue", "No-op"),
];

/// Representative exception rows:
/// (exception type, artifact, pattern id, local, flow, recovery).
pub const REPRESENTATIVE_ROWS: [(&str, &str, &str, &str, &str, &str); 12] = [
    ("Ambiguous Goal", "Goal", "P001", "Clarify Prompt", "Abort", "No-op"),
    ("Contradictory Reasoning", "Reasoning", "P008", "Graph Validation", "Abort", "No-op"),
    ("Faulty Task Structuring", "Planning", "P012", "Plan Repair", "Abort", "No-op"),
    ("Memory Poisoning", "Memory", "P027", "Reset Memory", "Abort", "Rollback"),
    ("Hallucinated Facts", "Knowledge Base", "P011", "KB Trust Scoring", "Continue", "No-op"),
    ("Tool Invocation Exception", "Tool", "P018", "Retry with Backoff", "Continue", "No-op"),
    ("Tool Output Exception", "Tool", "P021", "Schema Validation", "Abort", "No-op"),
    ("API Invocation Exception", "Interface", "P018", "Retry with Backoff", "Continue", "No-op"),
    ("UI Element Misclick", "Interface", "P037", "Escalate to Human", "Skip", "Compensate"),
    ("Error Propagation", "Task Flow", "P017", "Abort Task Chain", "Abort", "Rollback"),
    ("Agent Conflict", "Other Agent", "P047", "Conflict Resolution Prompt", "Abort", "No-op"),
    ("Protocol Mismatch", "External System", "P041", "Protocol Downgrade", "Abort", "No-op"),
];

/// The forty local handling mechanism names.
pub const LOCAL_MECHANISMS: [&str; 40] = [
    "Clarify Prompt",
    "Echo Validation",
    "Context Tagging",
    "Default Interpretation",
    "Disentangled Prompting",
    "Prompt Rewriting",
    "Prompt Sanitization",
    "Graph Validation",
    "KB Trust Scoring",
    "Logic Re-ranking",
    "Recursive Checkpointing",
    "Abort Task Chain",
    "Conflict Resolution",
    "Constraint Pruning",
    "Forward Chaining",
    "Peer Confirmation",
    "Plan Repair",
    "Plan Shortening",
    "Role-based Check",
    "Subgoal Reordering",
    "Attribute Filtering",
    "Escalate UI Failure",
    "External Call Timeout",
    "Fallback",
    "Fallback to Alternate API",
    "Low-confidence Filter",
    "Memory Slot Isolation",
    "Oracle Verification",
    "Output Sanitization",
    "Output Truncation",
    "Protocol Downgrade",
    "Reset Memory",
    "Response Normalization",
    "Retry with Backoff",
    "Sampling Adjustment",
    "Schema Validation",
    "Semantic Constraint Checking",
    "Switch Tool",
    "Timeout Escalation",
    "Escalate to Human",
];

/// Spellings the pattern table uses for four of the mechanisms.
pub const PATTERN_TABLE_SPELLINGS: [&str; 4] = [
    "Forward Checking",
    "Fallback Template",
    "External Call Timeout Fallback",
    "Conflict Resolution Prompt",
];

pub const FLOWS: [&str; 3] = ["Continue", "Skip", "Abort"];
pub const RECOVERIES: [&str; 3] = ["No-op", "Rollback", "Compensate"];

/// Writes to the process stdout directly so the line shows up even when the
/// test harness captures `println!`.
pub fn report(criterion: u32, what: &str, ok: bool, detail: &str) {
    let line = if ok {
        format!("PASS criterion {criterion}: {what}\n")
    } else {
        format!("FAIL criterion {criterion}: {what} ({detail})\n")
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

pub fn temp_path(stem: &str) -> PathBuf {
    static COUNTER: AtomicUsize = AtomicUsize::new(0);
    let n = COUNTER.fetch_add(1, Ordering::SeqCst);
    std::env::temp_dir().join(format!("shielda-test-{}-{stem}-{n}", std::process::id()))
}

/// Reference root-cause chain computed by fixpoint iteration rather than a
/// single backward scan. Returns (chain seqs newest first, cross-mission refs
/// in descending order).
pub fn oracle_chain(events: &[WorkflowEvent], symptom_seq: u64, seeds: &BTreeSet<EntityRef>) -> (Vec<u64>, Vec<u64>) {
    let symptom = events.iter().find(|e| e.seq == symptom_seq).expect("symptom in log");
    let earlier: Vec<&WorkflowEvent> = events.iter().filter(|e| e.seq < symptom_seq).collect();
    let mut connected: BTreeSet<u64> = BTreeSet::from([symptom_seq]);

    let reach = |e: &WorkflowEvent, connected: &BTreeSet<u64>| -> BTreeSet<EntityRef> {
        let mut set: BTreeSet<EntityRef> = seeds.clone();
        for c in events.iter().filter(|c| connected.contains(&c.seq) && c.seq > e.seq) {
            set.extend(c.entities.iter().cloned());
        }
        set
    };

    loop {
        let mut changed = false;
        for e in &earlier {
            if e.mission_id != symptom.mission_id || connected.contains(&e.seq) {
                continue;
            }
            if !e.entities.is_disjoint(&reach(e, &connected)) {
                connected.insert(e.seq);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let cutoff = events
        .iter()
        .filter(|e| connected.contains(&e.seq) && e.seq != symptom_seq && e.phase == LogPhase::RP)
        .map(|e| e.seq)
        .max();
    let bound = cutoff.unwrap_or(0);
    let mut chain: Vec<u64> = connected.iter().copied().filter(|s| *s >= bound).collect();
    chain.sort_unstable_by(|a, b| b.cmp(a));

    let mut cross: Vec<u64> = earlier
        .iter()
        .filter(|e| e.mission_id != symptom.mission_id && e.seq > bound)
        .filter(|e| !e.entities.is_disjoint(&reach(e, &connected)))
        .map(|e| e.seq)
        .collect();
    cross.sort_unstable_by(|a, b| b.cmp(a));
    (chain, cross)
}

/// A generated log with one planted causal chain ending at `symptom_seq`.
pub struct PlantedLog {
    pub log: EventLog,
    pub symptom_seq: u64,
    /// Planted chain seqs, newest first.
    pub planted: Vec<u64>,
}

/// Builds a log of at most `max_events` events. Planted chain events carry
/// only link entities when `noisy` is false, so the planted chain is the
/// exact expected answer; with `noisy` they also pick up pool entities.
pub fn planted_log<R: rand::RngExt>(rng: &mut R, chain_len: usize, max_events: usize, noisy: bool) -> PlantedLog {
    let pool: Vec<EntityRef> = (0..12)
        .map(|i| match i % 3 {
            0 => EntityRef::file(&format!("src/f{i}.rs")),
            1 => EntityRef::tool(&format!("tool{i}")),
            _ => EntityRef::ident(&format!("id{i}")),
        })
        .collect();
    let links: Vec<EntityRef> = (0..chain_len).map(|i| EntityRef::ident(&format!("link{i}"))).collect();

    let total = rng.random_range((chain_len + 5)..=max_events);
    let symptom_pos = rng.random_range(chain_len.max(total / 2)..total);
    let mut planted_pos: BTreeSet<usize> = BTreeSet::from([symptom_pos]);
    while planted_pos.len() < chain_len {
        planted_pos.insert(rng.random_range(0..symptom_pos));
    }
    // Oldest planted event is the root.
    let order: Vec<usize> = planted_pos.iter().copied().collect();

    let mut log = EventLog::in_memory();
    let mut symptom_seq = 0;
    let mut planted = Vec::new();
    for pos in 0..total {
        let mission = if rng.random_bool(0.1) { "m2" } else { "m1" };
        let event = if let Some(rank) = order.iter().position(|p| *p == pos) {
            // Rank 0 is the root; each planted event shares link[rank] with
            // the next newer one and link[rank-1] with the next older one.
            let is_root = rank == 0;
            let is_symptom = pos == symptom_pos;
            let phase = if is_root && !is_symptom { LogPhase::RP } else { LogPhase::E };
            let kind = if is_symptom { EventKind::ExceptionRaised } else { EventKind::PlanStepStarted };
            let mut ev = NewEvent::new(kind, phase, "m1", "t1");
            if rank > 0 {
                ev = ev.with_entity(links[rank - 1].clone());
            }
            if !is_symptom {
                ev = ev.with_entity(links[rank].clone());
            }
            if is_symptom && chain_len == 1 {
                ev = ev.with_entity(EntityRef::ident("lonely-symptom"));
            }
            if noisy && rng.random_bool(0.5) {
                ev = ev.with_entity(pool[rng.random_range(0..pool.len())].clone());
            }
            ev
        } else {
            let phase = if rng.random_bool(0.15) { LogPhase::RP } else { LogPhase::E };
            let kind = if phase == LogPhase::RP { EventKind::PlanGenerated } else { EventKind::ToolInvoked };
            let mut ev = NewEvent::new(kind, phase, mission, "t1");
            for _ in 0..rng.random_range(0..=2) {
                ev = ev.with_entity(pool[rng.random_range(0..pool.len())].clone());
            }
            if mission == "m2" && rng.random_bool(0.3) {
                ev = ev.with_entity(links[rng.random_range(0..links.len())].clone());
            }
            ev
        };
        let event = event.kind.required_keys().iter().fold(event, |e, k| e.with(k, 0));
        let seq = log.append(event).expect("in-memory append");
        if pos == symptom_pos {
            symptom_seq = seq;
        }
        if planted_pos.contains(&pos) {
            planted.push(seq);
        }
    }
    planted.reverse();
    PlantedLog {
        log,
        symptom_seq,
        planted,
    }
}

/// Every ExceptionRaised is immediately followed (on its thread) by
/// Classified and then PatternSelected.
pub fn exceptions_are_classified(events: &[WorkflowEvent]) -> bool {
    events.iter().enumerate().all(|(i, e)| {
        if e.kind != EventKind::ExceptionRaised {
            return true;
        }
        let next: Vec<EventKind> = events[i + 1..]
            .iter()
            .filter(|n| n.thread_id == e.thread_id)
            .take(2)
            .map(|n| n.kind)
            .collect();
        next == [EventKind::Classified, EventKind::PatternSelected]
    })
}
