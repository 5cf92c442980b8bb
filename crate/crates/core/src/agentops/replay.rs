//! Re-derives recorded decisions from their logged inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::event::{EventKind, WorkflowEvent};
use super::log;
use crate::classifier::{Classification, ExceptionId, RawExceptionSignal, RuleSet};
use crate::escalation::{root_cause_trace, EntityRef};
use crate::registry::PatternRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed log at seq {seq}: {reason}")]
pub struct MalformedLog {
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayedDecision {
    pub seq: u64,
    pub kind: EventKind,
    pub recorded: String,
    pub derived: String,
}

impl ReplayedDecision {
    pub fn diverged(&self) -> bool {
        self.recorded != self.derived
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DecisionTrace {
    pub decisions: Vec<ReplayedDecision>,
}

impl DecisionTrace {
    pub fn divergences(&self) -> Vec<&ReplayedDecision> {
        self.decisions.iter().filter(|d| d.diverged()).collect()
    }

    pub fn is_clean(&self) -> bool {
        self.decisions.iter().all(|d| !d.diverged())
    }
}

fn malformed(seq: u64, reason: impl Into<String>) -> MalformedLog {
    MalformedLog {
        seq,
        reason: reason.into(),
    }
}

fn referenced<'a>(
    events: &'a [WorkflowEvent],
    from: &WorkflowEvent,
    key: &str,
    kinds: &[EventKind],
) -> Result<&'a WorkflowEvent, MalformedLog> {
    let seq = from
        .payload_u64(key)
        .ok_or_else(|| malformed(from.seq, format!("`{key}` is not a sequence number")))?;
    let target = log::get(events, seq).ok_or_else(|| malformed(from.seq, format!("`{key}` points at missing event {seq}")))?;
    if seq >= from.seq || !kinds.contains(&target.kind) {
        return Err(malformed(from.seq, format!("`{key}` points at {} event {seq}", target.kind)));
    }
    Ok(target)
}

fn decode<T: serde::de::DeserializeOwned>(event: &WorkflowEvent, key: &str) -> Result<T, MalformedLog> {
    let v = event.payload.get(key).cloned().unwrap_or(Value::Null);
    serde_json::from_value(v).map_err(|e| malformed(event.seq, format!("`{key}`: {e}")))
}

/// Mission → pattern overrides, as recorded at goal ingestion.
fn overrides_by_mission(events: &[WorkflowEvent]) -> Result<BTreeMap<String, BTreeMap<String, String>>, MalformedLog> {
    let mut out = BTreeMap::new();
    for e in events.iter().filter(|e| e.kind == EventKind::GoalIngested) {
        let o: BTreeMap<String, String> = match e.payload.get("pattern_overrides") {
            Some(_) => decode(e, "pattern_overrides")?,
            None => BTreeMap::new(),
        };
        out.insert(e.mission_id.clone(), o);
    }
    Ok(out)
}

pub fn replay(
    events: &[WorkflowEvent],
    registry: &PatternRegistry,
    rules: &RuleSet,
) -> Result<DecisionTrace, MalformedLog> {
    let overrides = overrides_by_mission(events)?;
    let none = BTreeMap::new();
    let mut trace = DecisionTrace::default();

    for e in events {
        let (recorded, derived) = match e.kind {
            EventKind::Classified => {
                let cause = referenced(events, e, "cause_seq", &[EventKind::ExceptionRaised])?;
                let signal: RawExceptionSignal = decode(cause, "signal")?;
                let c = rules.classify(&signal);
                (
                    describe(e.payload_str("exception_id"), e.payload_str("matched_rule")),
                    describe(Some(c.exception_id.as_str()), c.matched_rule.as_deref()),
                )
            }
            EventKind::PatternSelected => {
                let decision = referenced(events, e, "decision_seq", &[EventKind::Classified, EventKind::Reclassified])?;
                let id = ExceptionId::from(
                    decision
                        .payload_str("exception_id")
                        .ok_or_else(|| malformed(decision.seq, "exception_id is not a string"))?,
                );
                let o = overrides.get(&e.mission_id).unwrap_or(&none);
                let (p, source) = registry.resolve_with_overrides(&id, o);
                (
                    format!("{} via {}", e.payload_str("pattern_id").unwrap_or("?"), e.payload_str("source").unwrap_or("?")),
                    format!("{} via {}", p.pattern_id, source.name()),
                )
            }
            EventKind::Reclassified => {
                let esc = referenced(events, e, "escalation_seq", &[EventKind::EscalationStarted])?;
                let symptom = esc
                    .payload_u64("symptom_seq")
                    .ok_or_else(|| malformed(esc.seq, "symptom_seq is not a sequence number"))?;
                let seeds: BTreeSet<EntityRef> = decode(esc, "seeds")?;
                let prior: Classification = decode(esc, "prior")?;
                let chain = root_cause_trace(events, symptom, &seeds).map_err(|err| malformed(esc.seq, err.to_string()))?;
                let revised = rules.reclassify(&prior, &chain);
                let recorded_chain: Vec<u64> = decode(e, "chain")?;
                (
                    format!("{} chain {:?}", e.payload_str("exception_id").unwrap_or("?"), recorded_chain),
                    format!("{} chain {:?}", revised.exception_id, chain.seqs()),
                )
            }
            _ => continue,
        };
        trace.decisions.push(ReplayedDecision {
            seq: e.seq,
            kind: e.kind,
            recorded,
            derived,
        });
    }
    Ok(trace)
}

fn describe(id: Option<&str>, rule: Option<&str>) -> String {
    format!("{} [{}]", id.unwrap_or("?"), rule.unwrap_or("-"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentops::event::{LogPhase, NewEvent};
    use crate::agentops::log::EventLog;
    use crate::classifier::SignalOrigin;
    use crate::data::Catalog;

    #[test]
    fn empty_log_replays_to_empty_trace() {
        let c = Catalog::canonical();
        let t = replay(&[], &c.registry, &c.rules).unwrap();
        assert!(t.decisions.is_empty());
    }

    #[test]
    fn tampered_classification_diverges() {
        let c = Catalog::canonical();
        let mut log = EventLog::in_memory();
        let sig = RawExceptionSignal::new("HTTP 504 gateway timeout", SignalOrigin::ToolCall, "t1").unwrap();
        let raised = log
            .append(
                NewEvent::new(EventKind::ExceptionRaised, LogPhase::E, "m", "t1")
                    .with("signal", serde_json::to_value(&sig).unwrap()),
            )
            .unwrap();
        let classified = log
            .append(
                NewEvent::new(EventKind::Classified, LogPhase::E, "m", "t1")
                    .with("exception_id", "tool.invocation")
                    .with("matched_rule", "tool.unavailable")
                    .with("cause_seq", raised),
            )
            .unwrap();
        log.append(
            NewEvent::new(EventKind::PatternSelected, LogPhase::E, "m", "t1")
                .with("pattern_id", "P018")
                .with("decision_seq", classified)
                .with("source", "mapping"),
        )
        .unwrap();
        let t = replay(log.events(), &c.registry, &c.rules).unwrap();
        let d = t.divergences();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].seq, classified);
    }

    #[test]
    fn dangling_reference_is_malformed() {
        let c = Catalog::canonical();
        let mut log = EventLog::in_memory();
        log.append(
            NewEvent::new(EventKind::Classified, LogPhase::E, "m", "t1")
                .with("exception_id", "tool.invocation")
                .with("cause_seq", 9),
        )
        .unwrap();
        assert_eq!(replay(log.events(), &c.registry, &c.rules).unwrap_err().seq, 1);
    }
}
