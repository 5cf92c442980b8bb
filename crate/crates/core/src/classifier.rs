//! Rule-based exception classifier.
//!
//! Rules are ordered by `(priority desc, file order)`; the first rule whose
//! predicate holds decides the classification. A signal no rule matches is
//! `Unclassified`, which is a normal result routed to escalation.
//!
//! Predicate semantics, all conjunctive:
//! - `message_substring`: ASCII case-insensitive containment.
//! - `message_regex`: anchored at the start of the message (prefix with
//!   `.*` to search); `(?i)` and friends are honoured.
//! - `fields`: every listed structured field must be present with that value.
//! - `origin`: exact origin match.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agentops::event::{EventKind, WorkflowEvent};
use crate::escalation::trace::CausalChain;
use crate::taxonomy::{ArtifactKind, Phase, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalOrigin {
    ToolCall,
    ModelOutput,
    AgentMessage,
    ExternalSystem,
    Internal,
}

impl FromStr for SignalOrigin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "toolcall" => Ok(SignalOrigin::ToolCall),
            "modeloutput" => Ok(SignalOrigin::ModelOutput),
            "agentmessage" => Ok(SignalOrigin::AgentMessage),
            "externalsystem" => Ok(SignalOrigin::ExternalSystem),
            "internal" => Ok(SignalOrigin::Internal),
            _ => Err(format!("unknown origin `{s}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignalError {
    #[error("exception signal message must be non-empty")]
    EmptyMessage,
}

/// A raw exception as caught at a runtime boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SignalWire")]
pub struct RawExceptionSignal {
    pub message: String,
    pub source_phase_hint: Option<Phase>,
    pub origin: SignalOrigin,
    pub structured_fields: BTreeMap<String, String>,
    pub thread_id: String,
    pub step_ref: Option<String>,
}

#[derive(Deserialize)]
struct SignalWire {
    message: String,
    #[serde(default)]
    source_phase_hint: Option<Phase>,
    origin: SignalOrigin,
    #[serde(default)]
    structured_fields: BTreeMap<String, String>,
    #[serde(default)]
    thread_id: String,
    #[serde(default)]
    step_ref: Option<String>,
}

impl TryFrom<SignalWire> for RawExceptionSignal {
    type Error = SignalError;

    fn try_from(w: SignalWire) -> Result<Self, Self::Error> {
        let mut s = RawExceptionSignal::new(w.message, w.origin, w.thread_id)?;
        s.source_phase_hint = w.source_phase_hint;
        s.structured_fields = w.structured_fields;
        s.step_ref = w.step_ref;
        Ok(s)
    }
}

impl RawExceptionSignal {
    pub fn new(
        message: impl Into<String>,
        origin: SignalOrigin,
        thread_id: impl Into<String>,
    ) -> Result<Self, SignalError> {
        let message = message.into();
        if message.trim().is_empty() {
            return Err(SignalError::EmptyMessage);
        }
        Ok(Self {
            message,
            source_phase_hint: None,
            origin,
            structured_fields: BTreeMap::new(),
            thread_id: thread_id.into(),
            step_ref: None,
        })
    }

    pub fn with_field(mut self, key: &str, value: &str) -> Self {
        self.structured_fields.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_phase_hint(mut self, phase: Phase) -> Self {
        self.source_phase_hint = Some(phase);
        self
    }

    pub fn with_step(mut self, step_ref: &str) -> Self {
        self.step_ref = Some(step_ref.to_string());
        self
    }

    /// Views a logged event as a signal so it can be run through the rules.
    /// Recorded exceptions yield their original signal.
    pub fn from_event(event: &WorkflowEvent) -> Self {
        if event.kind == EventKind::ExceptionRaised {
            if let Some(sig) = event
                .payload
                .get("signal")
                .and_then(|v| serde_json::from_value::<RawExceptionSignal>(v.clone()).ok())
            {
                return sig;
            }
        }
        let text = event.text();
        let message = if text.trim().is_empty() { event.kind.name().to_string() } else { text };
        let mut fields: BTreeMap<String, String> = event
            .payload
            .iter()
            .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
            .collect();
        fields.insert("event_kind".to_string(), event.kind.name().to_string());
        Self {
            message,
            source_phase_hint: Some(event.phase.as_phase()),
            origin: SignalOrigin::Internal,
            structured_fields: fields,
            thread_id: event.thread_id.clone(),
            step_ref: event.payload_str("step_id").map(str::to_string),
        }
    }
}

/// Taxonomy id or the explicit `Unclassified` marker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExceptionId {
    Known(String),
    Unclassified,
}

pub const UNCLASSIFIED: &str = "unclassified";

impl ExceptionId {
    pub fn as_str(&self) -> &str {
        match self {
            ExceptionId::Known(id) => id,
            ExceptionId::Unclassified => UNCLASSIFIED,
        }
    }

    pub fn is_unclassified(&self) -> bool {
        matches!(self, ExceptionId::Unclassified)
    }
}

impl From<&str> for ExceptionId {
    fn from(s: &str) -> Self {
        if s == UNCLASSIFIED {
            ExceptionId::Unclassified
        } else {
            ExceptionId::Known(s.to_string())
        }
    }
}

impl fmt::Display for ExceptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ExceptionId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ExceptionId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(ExceptionId::from(String::deserialize(deserializer)?.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub exception_id: ExceptionId,
    pub phase: Phase,
    pub artifact: Option<ArtifactKind>,
    pub matched_rule: Option<String>,
    pub evidence: Vec<String>,
}

impl Classification {
    pub fn unclassified(hint: Option<Phase>) -> Self {
        Self {
            exception_id: ExceptionId::Unclassified,
            phase: resolve_phase(Phase::Both, hint),
            artifact: None,
            matched_rule: None,
            evidence: Vec::new(),
        }
    }
}

/// `Both` resolves to the hint when one is given, otherwise to `Execution`.
fn resolve_phase(entry_phase: Phase, hint: Option<Phase>) -> Phase {
    match entry_phase {
        Phase::Both => match hint {
            Some(Phase::ReasoningPlanning) => Phase::ReasoningPlanning,
            _ => Phase::Execution,
        },
        fixed => fixed,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_regex: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<SignalOrigin>,
}

/// One entry of the rule file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRule {
    pub rule_id: String,
    pub priority: i64,
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    pub target: String,
    /// Alternate exception name this rule also answers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<String>,
    /// Constraint text a plan-repair directive injects when this rule
    /// identifies a root cause.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<String>,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("malformed rule file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule `{rule_id}` targets unknown exception `{target}`")]
    UnknownTarget { rule_id: String, target: String },
    #[error("rule `{rule_id}` has an invalid regex: {source}")]
    BadRegex {
        rule_id: String,
        #[source]
        source: regex::Error,
    },
    #[error("duplicate rule id `{0}`")]
    DuplicateRule(String),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: ClassificationRule,
    regex: Option<Regex>,
    substring_lower: Option<String>,
    target_phase: Phase,
    target_artifact: ArtifactKind,
}

impl CompiledRule {
    /// Evidence strings when the rule matches, `None` otherwise.
    fn evaluate(&self, signal: &RawExceptionSignal) -> Option<Vec<String>> {
        let m = &self.rule.matcher;
        let mut evidence = Vec::new();
        if let Some(origin) = m.origin {
            if signal.origin != origin {
                return None;
            }
            evidence.push(format!("origin={origin:?}"));
        }
        if let Some(needle) = &self.substring_lower {
            let hay = signal.message.to_ascii_lowercase();
            let at = hay.find(needle.as_str())?;
            evidence.push(signal.message[at..at + needle.len()].to_string());
        }
        if let Some(re) = &self.regex {
            let found = re.find(&signal.message)?;
            let text = found.as_str().trim_start();
            let tail: String = text.chars().rev().take(80).collect::<Vec<_>>().into_iter().rev().collect();
            evidence.push(tail);
        }
        for (k, v) in &m.fields {
            if signal.structured_fields.get(k) != Some(v) {
                return None;
            }
            evidence.push(format!("{k}={v}"));
        }
        Some(evidence)
    }
}

/// Validated, ordered rules bound to the taxonomy they target.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
    taxonomy: Arc<Taxonomy>,
}

pub fn load_rules<R: Read>(source: R, taxonomy: Arc<Taxonomy>) -> Result<RuleSet, RuleError> {
    let rules: Vec<ClassificationRule> = serde_json::from_reader(source)?;
    RuleSet::new(rules, taxonomy)
}

impl RuleSet {
    pub fn new(rules: Vec<ClassificationRule>, taxonomy: Arc<Taxonomy>) -> Result<Self, RuleError> {
        let mut compiled: Vec<CompiledRule> = Vec::with_capacity(rules.len());
        for rule in rules {
            if compiled.iter().any(|c| c.rule.rule_id == rule.rule_id) {
                return Err(RuleError::DuplicateRule(rule.rule_id));
            }
            let entry = taxonomy.lookup(&rule.target).ok_or_else(|| RuleError::UnknownTarget {
                rule_id: rule.rule_id.clone(),
                target: rule.target.clone(),
            })?;
            let regex = rule
                .matcher
                .message_regex
                .as_deref()
                .map(|p| Regex::new(&format!("^(?:{p})")))
                .transpose()
                .map_err(|source| RuleError::BadRegex {
                    rule_id: rule.rule_id.clone(),
                    source,
                })?;
            compiled.push(CompiledRule {
                substring_lower: rule.matcher.message_substring.as_ref().map(|s| s.to_ascii_lowercase()),
                regex,
                target_phase: entry.phase,
                target_artifact: entry.artifact,
                rule,
            });
        }
        // stable sort keeps file order among equal priorities
        compiled.sort_by_key(|c| std::cmp::Reverse(c.rule.priority));
        Ok(Self {
            rules: compiled,
            taxonomy,
        })
    }

    pub fn empty(taxonomy: Arc<Taxonomy>) -> Self {
        Self {
            rules: Vec::new(),
            taxonomy,
        }
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Rules in evaluation order.
    pub fn rules(&self) -> impl Iterator<Item = &ClassificationRule> {
        self.rules.iter().map(|c| &c.rule)
    }

    pub fn rule(&self, rule_id: &str) -> Option<&ClassificationRule> {
        self.rules().find(|r| r.rule_id == rule_id)
    }

    /// Distinct exception ids some rule can produce.
    pub fn covered_targets(&self) -> std::collections::BTreeSet<&str> {
        self.rules().map(|r| r.target.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let rules: Vec<&ClassificationRule> = self.rules().collect();
        serde_json::to_string_pretty(&rules).expect("rules serialize")
    }

    pub fn classify(&self, signal: &RawExceptionSignal) -> Classification {
        self.classify_filtered(signal, |_| true)
            .unwrap_or_else(|| Classification::unclassified(signal.source_phase_hint))
    }

    fn classify_filtered(
        &self,
        signal: &RawExceptionSignal,
        admit: impl Fn(Phase) -> bool,
    ) -> Option<Classification> {
        self.rules
            .iter()
            .filter(|r| admit(r.target_phase))
            .find_map(|r| {
                r.evaluate(signal).map(|evidence| Classification {
                    exception_id: ExceptionId::Known(r.rule.target.clone()),
                    phase: resolve_phase(r.target_phase, signal.source_phase_hint),
                    artifact: Some(r.target_artifact),
                    matched_rule: Some(r.rule.rule_id.clone()),
                    evidence,
                })
            })
    }

    /// Classifies the root (earliest) event of a causal chain instead of the
    /// symptom. A reasoning/planning root only admits RP or RP/E exception
    /// types. Without a matching rule the prior classification stands.
    pub fn reclassify(&self, prior: &Classification, evidence: &CausalChain) -> Classification {
        let root = evidence.root();
        let signal = RawExceptionSignal::from_event(root);
        let rp_root = root.phase.as_phase() == Phase::ReasoningPlanning;
        self.classify_filtered(&signal, |p| !rp_root || p != Phase::Execution)
            .unwrap_or_else(|| prior.clone())
    }
}

/// Free-function form of [`RuleSet::classify`].
pub fn classify(rules: &RuleSet, signal: &RawExceptionSignal) -> Classification {
    rules.classify(signal)
}

/// Free-function form of [`RuleSet::reclassify`].
pub fn reclassify(rules: &RuleSet, prior: &Classification, evidence: &CausalChain) -> Classification {
    rules.reclassify(prior, evidence)
}
