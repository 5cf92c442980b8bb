use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::escalation::entities::EntityRef;
use crate::taxonomy::Phase;

pub type Payload = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    GoalIngested,
    PlanGenerated,
    PlanStepStarted,
    ToolInvoked,
    SideEffectRecorded,
    ExceptionRaised,
    Classified,
    PatternSelected,
    LocalAttempt,
    FlowApplied,
    RecoveryApplied,
    EscalationStarted,
    Reclassified,
    DirectiveIssued,
    ThreadAborted,
    StepSkipped,
    MissionCompleted,
    MissionTerminated,
    CheckpointTaken,
}

impl EventKind {
    pub const ALL: [EventKind; 19] = [
        EventKind::GoalIngested,
        EventKind::PlanGenerated,
        EventKind::PlanStepStarted,
        EventKind::ToolInvoked,
        EventKind::SideEffectRecorded,
        EventKind::ExceptionRaised,
        EventKind::Classified,
        EventKind::PatternSelected,
        EventKind::LocalAttempt,
        EventKind::FlowApplied,
        EventKind::RecoveryApplied,
        EventKind::EscalationStarted,
        EventKind::Reclassified,
        EventKind::DirectiveIssued,
        EventKind::ThreadAborted,
        EventKind::StepSkipped,
        EventKind::MissionCompleted,
        EventKind::MissionTerminated,
        EventKind::CheckpointTaken,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::GoalIngested => "GoalIngested",
            EventKind::PlanGenerated => "PlanGenerated",
            EventKind::PlanStepStarted => "PlanStepStarted",
            EventKind::ToolInvoked => "ToolInvoked",
            EventKind::SideEffectRecorded => "SideEffectRecorded",
            EventKind::ExceptionRaised => "ExceptionRaised",
            EventKind::Classified => "Classified",
            EventKind::PatternSelected => "PatternSelected",
            EventKind::LocalAttempt => "LocalAttempt",
            EventKind::FlowApplied => "FlowApplied",
            EventKind::RecoveryApplied => "RecoveryApplied",
            EventKind::EscalationStarted => "EscalationStarted",
            EventKind::Reclassified => "Reclassified",
            EventKind::DirectiveIssued => "DirectiveIssued",
            EventKind::ThreadAborted => "ThreadAborted",
            EventKind::StepSkipped => "StepSkipped",
            EventKind::MissionCompleted => "MissionCompleted",
            EventKind::MissionTerminated => "MissionTerminated",
            EventKind::CheckpointTaken => "CheckpointTaken",
        }
    }

    /// Payload keys every event of this kind must carry.
    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            EventKind::GoalIngested => &["goal"],
            EventKind::PlanGenerated => &["plan"],
            EventKind::PlanStepStarted => &["step_id", "action"],
            EventKind::ToolInvoked => &["step_id"],
            EventKind::SideEffectRecorded => &["effect"],
            EventKind::ExceptionRaised => &["signal"],
            EventKind::Classified => &["exception_id", "cause_seq"],
            EventKind::PatternSelected => &["pattern_id", "decision_seq", "source"],
            EventKind::LocalAttempt => &["mechanism", "attempt", "result"],
            EventKind::FlowApplied => &["decision"],
            EventKind::RecoveryApplied => &["action"],
            EventKind::EscalationStarted => &["symptom_seq", "depth", "prior"],
            EventKind::Reclassified => &["exception_id", "escalation_seq", "chain"],
            EventKind::DirectiveIssued => &["directive"],
            EventKind::ThreadAborted => &["reason"],
            EventKind::StepSkipped => &["step_id"],
            EventKind::MissionCompleted => &[],
            EventKind::MissionTerminated => &["reason"],
            EventKind::CheckpointTaken => &["checkpoint_id", "scope", "digest"],
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown event kind `{s}`"))
    }
}

/// Log phase: events happen in one concrete phase, so only `RP` and `E`
/// appear on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LogPhase {
    RP,
    E,
}

impl LogPhase {
    pub fn as_phase(self) -> Phase {
        match self {
            LogPhase::RP => Phase::ReasoningPlanning,
            LogPhase::E => Phase::Execution,
        }
    }
}

impl From<Phase> for LogPhase {
    /// `Both` collapses to `E`: a concrete event is observed at an action boundary.
    fn from(p: Phase) -> Self {
        match p {
            Phase::ReasoningPlanning => LogPhase::RP,
            Phase::Execution | Phase::Both => LogPhase::E,
        }
    }
}

impl Serialize for LogPhase {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(match self {
            LogPhase::RP => "RP",
            LogPhase::E => "E",
        })
    }
}

impl<'de> Deserialize<'de> for LogPhase {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match String::deserialize(deserializer)?.as_str() {
            "RP" => Ok(LogPhase::RP),
            "E" => Ok(LogPhase::E),
            other => Err(serde::de::Error::custom(format!("log phase must be RP or E, got `{other}`"))),
        }
    }
}

/// One AgentOps record. Field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEvent {
    pub seq: u64,
    pub logical_time: u64,
    pub thread_id: String,
    pub mission_id: String,
    pub phase: LogPhase,
    pub kind: EventKind,
    pub payload: Payload,
    pub entities: BTreeSet<EntityRef>,
}

impl WorkflowEvent {
    pub fn payload_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }

    pub fn payload_u64(&self, key: &str) -> Option<u64> {
        self.payload.get(key).and_then(Value::as_u64)
    }

    /// Free text the entity extractors and the classifier look at.
    pub fn text(&self) -> String {
        TEXT_KEYS
            .iter()
            .filter_map(|k| self.payload_str(k))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Payload keys whose string values are scanned for entities at append time.
pub const TEXT_KEYS: [&str; 5] = ["message", "text", "plan", "directive", "goal"];

/// An event before the log assigns `seq` and `logical_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEvent {
    pub thread_id: String,
    pub mission_id: String,
    pub phase: LogPhase,
    pub kind: EventKind,
    pub payload: Payload,
    pub entities: BTreeSet<EntityRef>,
}

impl NewEvent {
    pub fn new(kind: EventKind, phase: LogPhase, mission_id: &str, thread_id: &str) -> Self {
        Self {
            thread_id: thread_id.to_string(),
            mission_id: mission_id.to_string(),
            phase,
            kind,
            payload: Payload::new(),
            entities: BTreeSet::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }

    pub fn with_entity(mut self, entity: EntityRef) -> Self {
        self.entities.insert(entity);
        self
    }

    pub fn with_entities(mut self, entities: impl IntoIterator<Item = EntityRef>) -> Self {
        self.entities.extend(entities);
        self
    }
}
