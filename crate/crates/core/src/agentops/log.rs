use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use thiserror::Error;

use super::event::{EventKind, LogPhase, NewEvent, WorkflowEvent, TEXT_KEYS};
use crate::escalation::entities::{EntityRef, ExtractorSet};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log I/O failed: {0}")]
    Io(#[from] io::Error),
    #[error("{kind} event is missing required payload key `{key}`")]
    MissingPayloadKey { kind: EventKind, key: &'static str },
    #[error("malformed log at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Append-only event log with a logical clock. Entities are extracted from
/// the payload's text fields when an event is appended, so readers never
/// re-parse payloads.
pub struct EventLog {
    events: Vec<WorkflowEvent>,
    clock: u64,
    extractors: ExtractorSet,
    sink: Option<BufWriter<File>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self::with_extractors(ExtractorSet::shipped())
    }

    pub fn with_extractors(extractors: ExtractorSet) -> Self {
        Self {
            events: Vec::new(),
            clock: 0,
            extractors,
            sink: None,
        }
    }

    /// Mirrors every appended event to `path` (truncated first), one JSON
    /// object per line, flushed on each append.
    pub fn create_file(path: &Path) -> Result<Self, LogError> {
        let mut log = Self::in_memory();
        log.sink = Some(BufWriter::new(File::create(path)?));
        Ok(log)
    }

    pub fn append(&mut self, event: NewEvent) -> Result<u64, LogError> {
        for &key in event.kind.required_keys() {
            if !event.payload.contains_key(key) {
                return Err(LogError::MissingPayloadKey { kind: event.kind, key });
            }
        }
        let mut entities = event.entities;
        for key in TEXT_KEYS {
            if let Some(text) = event.payload.get(key).and_then(|v| v.as_str()) {
                entities.extend(self.extractors.extract(text));
            }
        }
        let seq = self.events.len() as u64 + 1;
        let record = WorkflowEvent {
            seq,
            logical_time: self.clock,
            thread_id: event.thread_id,
            mission_id: event.mission_id,
            phase: event.phase,
            kind: event.kind,
            payload: event.payload,
            entities,
        };
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &record).map_err(io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.events.push(record);
        self.clock += 1;
        Ok(seq)
    }

    pub fn advance_clock(&mut self, ticks: u64) {
        self.clock += ticks;
    }

    pub fn now(&self) -> u64 {
        self.clock
    }

    pub fn events(&self) -> &[WorkflowEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, seq: u64) -> Option<&WorkflowEvent> {
        get(&self.events, seq)
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn extractors(&self) -> &ExtractorSet {
        &self.extractors
    }

    pub fn query(&self, filter: &EventFilter) -> Vec<&WorkflowEvent> {
        query(&self.events, filter)
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.events)
    }
}

pub fn get(events: &[WorkflowEvent], seq: u64) -> Option<&WorkflowEvent> {
    let idx = usize::try_from(seq).ok()?.checked_sub(1)?;
    events.get(idx).filter(|e| e.seq == seq)
}

pub fn to_jsonl(events: &[WorkflowEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Reads a JSONL log and checks that `seq` is gapless from 1.
pub fn read_log<R: Read>(source: R) -> Result<Vec<WorkflowEvent>, LogError> {
    let mut events = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: WorkflowEvent = serde_json::from_str(&line).map_err(|e| LogError::Malformed {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let expected = events.len() as u64 + 1;
        if event.seq != expected {
            return Err(LogError::Malformed {
                line: idx + 1,
                reason: format!("expected seq {expected}, found {}", event.seq),
            });
        }
        for &key in event.kind.required_keys() {
            if !event.payload.contains_key(key) {
                return Err(LogError::Malformed {
                    line: idx + 1,
                    reason: format!("{} event lacks `{key}`", event.kind),
                });
            }
        }
        events.push(event);
    }
    Ok(events)
}

pub fn read_log_file(path: &Path) -> Result<Vec<WorkflowEvent>, LogError> {
    read_log(File::open(path)?)
}

#[derive(Debug, Clone, Default)]
pub struct EventFilter {
    pub thread_id: Option<String>,
    pub kind: Option<EventKind>,
    pub phase: Option<LogPhase>,
    pub entity: Option<EntityRef>,
    pub seq_range: Option<RangeInclusive<u64>>,
}

impl EventFilter {
    pub fn kind(kind: EventKind) -> Self {
        Self {
            kind: Some(kind),
            ..Self::default()
        }
    }

    pub fn entity(entity: EntityRef) -> Self {
        Self {
            entity: Some(entity),
            ..Self::default()
        }
    }

    fn matches(&self, e: &WorkflowEvent) -> bool {
        self.thread_id.as_ref().is_none_or(|t| &e.thread_id == t)
            && self.kind.is_none_or(|k| e.kind == k)
            && self.phase.is_none_or(|p| e.phase == p)
            && self.entity.as_ref().is_none_or(|ent| e.entities.contains(ent))
            && self.seq_range.as_ref().is_none_or(|r| r.contains(&e.seq))
    }
}

pub fn query<'a>(events: &'a [WorkflowEvent], filter: &EventFilter) -> Vec<&'a WorkflowEvent> {
    events.iter().filter(|e| filter.matches(e)).collect()
}

/// Distinct entities mentioned anywhere in `events`.
pub fn entity_universe(events: &[WorkflowEvent]) -> BTreeSet<EntityRef> {
    events.iter().flat_map(|e| e.entities.iter().cloned()).collect()
}
