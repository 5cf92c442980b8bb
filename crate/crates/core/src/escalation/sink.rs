//! Named escalation sinks. Records are machine-readable; nothing here blocks
//! on a human.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::classifier::Classification;

/// One line of the escalation queue file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationRecord {
    /// Logical time of delivery.
    pub timestamp: u64,
    pub thread_id: String,
    pub classification: Classification,
    /// Seqs of the causal chain, symptom first.
    pub chain: Vec<u64>,
    pub payload: Value,
}

pub trait EscalationSink {
    fn id(&self) -> &str;

    fn deliver(&mut self, record: EscalationRecord) -> io::Result<()>;

    /// Whether delivery ends the mission outright rather than leaving it
    /// pending on an external handler.
    fn terminates(&self) -> bool;

    fn delivered(&self) -> &[EscalationRecord];
}

/// Queues records for a human supervisor, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct HumanQueueSink {
    queue: Option<BufWriter<File>>,
    path: Option<PathBuf>,
    records: Vec<EscalationRecord>,
}

impl HumanQueueSink {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to `path`, creating it if needed.
    pub fn with_queue_file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            queue: Some(BufWriter::new(file)),
            path: Some(path.to_path_buf()),
            records: Vec::new(),
        })
    }

    pub fn queue_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

impl EscalationSink for HumanQueueSink {
    fn id(&self) -> &str {
        "human"
    }

    fn deliver(&mut self, record: EscalationRecord) -> io::Result<()> {
        if let Some(q) = self.queue.as_mut() {
            serde_json::to_writer(&mut *q, &record)?;
            q.write_all(b"\n")?;
            q.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    fn terminates(&self) -> bool {
        false
    }

    fn delivered(&self) -> &[EscalationRecord] {
        &self.records
    }
}

/// Records and terminates.
#[derive(Debug, Default)]
pub struct DropSink {
    records: Vec<EscalationRecord>,
}

impl EscalationSink for DropSink {
    fn id(&self) -> &str {
        "drop"
    }

    fn deliver(&mut self, record: EscalationRecord) -> io::Result<()> {
        self.records.push(record);
        Ok(())
    }

    fn terminates(&self) -> bool {
        true
    }

    fn delivered(&self) -> &[EscalationRecord] {
        &self.records
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("unknown escalation sink `{0}` (expected human or drop)")]
    Unknown(String),
    #[error("cannot open escalation queue: {0}")]
    Io(#[from] io::Error),
}

pub const SINK_NAMES: [&str; 2] = ["human", "drop"];

pub fn make_sink(name: &str, queue_path: Option<&Path>) -> Result<Box<dyn EscalationSink>, SinkError> {
    match name {
        "human" => Ok(Box::new(match queue_path {
            Some(p) => HumanQueueSink::with_queue_file(p)?,
            None => HumanQueueSink::in_memory(),
        })),
        "drop" => Ok(Box::new(DropSink::default())),
        other => Err(SinkError::Unknown(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::Phase;

    fn record() -> EscalationRecord {
        EscalationRecord {
            timestamp: 7,
            thread_id: "t1".into(),
            classification: Classification::unclassified(Some(Phase::Execution)),
            chain: vec![5],
            payload: serde_json::json!({"signal": "zzz"}),
        }
    }

    #[test]
    fn human_queue_writes_jsonl() {
        let path = std::env::temp_dir().join(format!("shielda-queue-{}.jsonl", std::process::id()));
        let _ = std::fs::remove_file(&path);
        {
            let mut sink = make_sink("human", Some(&path)).unwrap();
            sink.deliver(record()).unwrap();
            assert!(!sink.terminates());
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let back: EscalationRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back, record());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn drop_sink_terminates_and_unknown_is_rejected() {
        let mut sink = make_sink("drop", None).unwrap();
        sink.deliver(record()).unwrap();
        assert!(sink.terminates());
        assert_eq!(sink.delivered().len(), 1);
        assert!(matches!(make_sink("pager", None), Err(SinkError::Unknown(_))));
    }
}
