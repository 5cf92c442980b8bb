//! Fallback diagnosis and routing for exceptions local handling could not
//! resolve.
//!
//! [`escalate`] traces the symptom back through the log, reclassifies the
//! chain's root, and either hands back a new pattern to run, routes to an
//! external sink, or ends the mission once the depth budget is spent.

pub mod directive;
pub mod entities;
pub mod sink;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

pub use directive::{synthesize_corrective_directive, CorrectiveDirective, DirectiveError, DirectiveTarget};
pub use entities::{extract_entities, EntityKind, EntityRef, ExtractorSet};
pub use sink::{make_sink, DropSink, EscalationRecord, EscalationSink, HumanQueueSink, SinkError};
pub use trace::{root_cause_trace, CausalChain, ChainLink, TraceError};

use crate::agentops::event::WorkflowEvent;
use crate::agentops::log;
use crate::classifier::{Classification, RuleSet};
use crate::registry::{HandlerPattern, PatternRegistry, PatternSource};

pub const DEFAULT_MAX_ESCALATION_DEPTH: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscalationPolicy {
    pub max_depth: u32,
    /// Sink used when reclassification brings nothing new.
    pub sink: String,
}

impl Default for EscalationPolicy {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_ESCALATION_DEPTH,
            sink: "human".to_string(),
        }
    }
}

/// What the controller is asked to diagnose.
#[derive(Debug, Clone, Copy)]
pub struct EscalationRequest<'a> {
    pub prior: &'a Classification,
    pub symptom_seq: u64,
    pub seeds: &'a BTreeSet<EntityRef>,
    /// 1-based depth of this escalation within the mission.
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionKind {
    Reclassified {
        classification: Classification,
        pattern: HandlerPattern,
        source: PatternSource,
    },
    ExternalSink {
        sink_id: String,
        payload: Value,
    },
    TerminateMission {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscalationDecision {
    pub kind: DecisionKind,
    pub depth: u32,
    pub chain: CausalChain,
}

impl EscalationDecision {
    pub fn name(&self) -> &'static str {
        match self.kind {
            DecisionKind::Reclassified { .. } => "Reclassified",
            DecisionKind::ExternalSink { .. } => "ExternalSink",
            DecisionKind::TerminateMission { .. } => "TerminateMission",
        }
    }
}

/// Seeds for tracing: entities in the signal message plus those on the
/// symptom event.
pub fn seeds_for(message: &str, symptom: &WorkflowEvent, extractors: &ExtractorSet) -> BTreeSet<EntityRef> {
    let mut seeds = extract_entities(message, extractors);
    seeds.extend(symptom.entities.iter().cloned());
    seeds
}

pub fn escalate(
    request: EscalationRequest<'_>,
    events: &[WorkflowEvent],
    rules: &RuleSet,
    registry: &PatternRegistry,
    overrides: &BTreeMap<String, String>,
    policy: &EscalationPolicy,
) -> Result<EscalationDecision, TraceError> {
    let chain = root_cause_trace(events, request.symptom_seq, request.seeds)?;
    let depth = request.depth;
    if depth >= policy.max_depth {
        return Ok(EscalationDecision {
            kind: DecisionKind::TerminateMission {
                reason: format!("escalation depth {depth} reached the limit of {}", policy.max_depth),
            },
            depth,
            chain,
        });
    }
    let revised = rules.reclassify(request.prior, &chain);
    let kind = if revised.exception_id != request.prior.exception_id {
        let (pattern, source) = registry.resolve_with_overrides(&revised.exception_id, overrides);
        DecisionKind::Reclassified {
            classification: revised,
            pattern: pattern.clone(),
            source,
        }
    } else {
        DecisionKind::ExternalSink {
            sink_id: policy.sink.clone(),
            payload: sink_payload(events, &chain, request.prior),
        }
    };
    Ok(EscalationDecision { kind, depth, chain })
}

/// Signal plus a log excerpt covering the chain.
pub fn sink_payload(events: &[WorkflowEvent], chain: &CausalChain, prior: &Classification) -> Value {
    let excerpt: Vec<Value> = chain
        .seqs()
        .into_iter()
        .filter_map(|s| log::get(events, s))
        .map(|e| json!({"seq": e.seq, "kind": e.kind, "thread_id": e.thread_id, "text": e.text()}))
        .collect();
    let signal = log::get(events, chain.symptom_seq())
        .and_then(|e| e.payload.get("signal").cloned())
        .unwrap_or(Value::Null);
    json!({
        "prior": prior.exception_id,
        "signal": signal,
        "log_excerpt": excerpt,
    })
}
