use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::ArtifactKind;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("checkpoint `{id}` is corrupt: stored digest {stored}, snapshot hashes to {actual}")]
    DigestMismatch { id: String, stored: String, actual: String },
}

/// Content hash of a JSON state value: SHA-256 over its compact
/// serialization. Object keys serialize sorted, so equal states hash equal.
pub fn state_digest(state: &Value) -> String {
    let bytes = serde_json::to_vec(state).expect("json value serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub checkpoint_id: String,
    pub thread_id: String,
    pub artifact_scope: ArtifactKind,
    pub state_digest: String,
    pub snapshot: Value,
}

#[derive(Debug, Clone, Default)]
pub struct CheckpointStore {
    checkpoints: Vec<Checkpoint>,
}

impl CheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn checkpoint(&mut self, thread_id: &str, scope: ArtifactKind, state: Value) -> &Checkpoint {
        let checkpoint_id = format!("cp-{}", self.checkpoints.len() + 1);
        self.checkpoints.push(Checkpoint {
            checkpoint_id,
            thread_id: thread_id.to_string(),
            artifact_scope: scope,
            state_digest: state_digest(&state),
            snapshot: state,
        });
        self.checkpoints.last().expect("just pushed")
    }

    /// Returns the stored snapshot after re-verifying its digest.
    pub fn restore(&self, checkpoint_id: &str) -> Result<Value, CheckpointError> {
        let cp = self
            .checkpoints
            .iter()
            .find(|c| c.checkpoint_id == checkpoint_id)
            .ok_or_else(|| CheckpointError::UnknownCheckpoint(checkpoint_id.to_string()))?;
        let actual = state_digest(&cp.snapshot);
        if actual != cp.state_digest {
            return Err(CheckpointError::DigestMismatch {
                id: cp.checkpoint_id.clone(),
                stored: cp.state_digest.clone(),
                actual,
            });
        }
        Ok(cp.snapshot.clone())
    }

    /// Most recent checkpoint for `(thread, scope)`.
    pub fn latest(&self, thread_id: &str, scope: ArtifactKind) -> Option<&Checkpoint> {
        self.checkpoints
            .iter()
            .rev()
            .find(|c| c.thread_id == thread_id && c.artifact_scope == scope)
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }
}
