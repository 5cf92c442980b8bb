use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::entities::EntityRef;
use crate::agentops::event::{LogPhase, WorkflowEvent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DirectiveError {
    #[error("no goal is recorded for the mission")]
    MissingGoal,
    #[error("violated constraint text must be non-empty")]
    EmptyConstraint,
    #[error("root event {0} is not a reasoning/planning event")]
    NotReasoningRoot(u64),
    #[error("root event {0} carries no root-cause entity")]
    NoRootEntity(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectiveTarget {
    ReasoningModule,
}

/// A regenerated goal with an injected constraint block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectiveDirective {
    pub original_goal: String,
    pub injected_constraints: Vec<String>,
    pub target: DirectiveTarget,
    /// Seq of the root event the constraints were derived from.
    pub provenance: u64,
}

impl CorrectiveDirective {
    pub fn text(&self) -> String {
        let mut out = String::with_capacity(self.original_goal.len() + 128);
        out.push_str(&self.original_goal);
        out.push_str("\n\nSYSTEM CONSTRAINTS:\n");
        for c in &self.injected_constraints {
            out.push_str("- ");
            out.push_str(c);
            out.push('\n');
        }
        out
    }
}

/// Builds a directive naming each root-cause entity. `root_entities` are the
/// entities that tie the root into the causal chain; when empty, every entity
/// on the root event is used.
pub fn synthesize_corrective_directive(
    root: &WorkflowEvent,
    root_entities: &BTreeSet<EntityRef>,
    original_goal: &str,
    violated_constraint: &str,
) -> Result<CorrectiveDirective, DirectiveError> {
    if original_goal.trim().is_empty() {
        return Err(DirectiveError::MissingGoal);
    }
    let constraint = violated_constraint.trim();
    if constraint.is_empty() {
        return Err(DirectiveError::EmptyConstraint);
    }
    if root.phase != LogPhase::RP {
        return Err(DirectiveError::NotReasoningRoot(root.seq));
    }
    let entities = if root_entities.is_empty() { &root.entities } else { root_entities };
    if entities.is_empty() {
        return Err(DirectiveError::NoRootEntity(root.seq));
    }
    let constraint = constraint.trim_end_matches('.');
    Ok(CorrectiveDirective {
        original_goal: original_goal.to_string(),
        injected_constraints: entities
            .iter()
            .map(|e| format!("{constraint}: `{}`.", e.value()))
            .collect(),
        target: DirectiveTarget::ReasoningModule,
        provenance: root.seq,
    })
}
