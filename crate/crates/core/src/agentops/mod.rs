//! Append-only event log, checkpoints and replay.

pub mod checkpoint;
pub mod event;
pub mod log;
pub mod replay;

pub use checkpoint::{state_digest, Checkpoint, CheckpointError, CheckpointStore};
pub use event::{EventKind, LogPhase, NewEvent, Payload, WorkflowEvent};
pub use log::{query, read_log, read_log_file, EventFilter, EventLog, LogError};
pub use replay::{replay, DecisionTrace, MalformedLog, ReplayedDecision};
