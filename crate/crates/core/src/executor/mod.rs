//! Runs a handler pattern against a classified exception: local handling
//! within a budget, then flow control, then state recovery.
//!
//! Flow control and state recovery only run after local handling succeeds.
//! Any other local result ends in `FailedLocal` and the caller escalates.

pub mod handlers;
pub mod retry;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use handlers::{BuiltinHandler, HandlerBindings, MechanismHandler};
pub use retry::{retry_with_backoff, seeded_rng, Exhausted, PolicyError, RetryPolicy, RetryReport};

use crate::agentops::checkpoint::{state_digest, CheckpointError, CheckpointStore};
use crate::agentops::event::{EventKind, LogPhase, NewEvent};
use crate::agentops::log::{EventLog, LogError};
use crate::classifier::{Classification, RawExceptionSignal};
use crate::escalation::{CausalChain, CorrectiveDirective, EscalationRecord};
use crate::registry::{FlowControlDecision, HandlerPattern, LocalHandlingMechanism, StateRecoveryAction};
use crate::taxonomy::ArtifactKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalResult {
    Success,
    Failure(String),
    NeedsEscalation,
    NotImplemented,
}

impl LocalResult {
    pub fn label(&self) -> &'static str {
        match self {
            LocalResult::Success => "success",
            LocalResult::Failure(_) => "failure",
            LocalResult::NeedsEscalation => "needs_escalation",
            LocalResult::NotImplemented => "not_implemented",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvokeMode {
    Primary,
    Alternate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateRecoveryError {
    #[error("no checkpoint for thread `{thread_id}` in scope {scope:?}")]
    NoCheckpoint { thread_id: String, scope: ArtifactKind },
    #[error("no side-effect record for step `{0}`")]
    MissingSideEffectRecord(String),
    #[error("compensation requires a plan step")]
    NoStep,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("restored state hashes to {actual}, checkpoint says {expected}")]
    DigestMismatch { expected: String, actual: String },
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Recovery(#[from] StateRecoveryError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// What handlers and recovery act on. The simulator implements it; a real
/// runtime would bind it to its tools, memory and remotes.
pub trait ExecutionEnv {
    fn reinvoke(&mut self, thread_id: &str, step_ref: &str, mode: InvokeMode) -> Result<(), RawExceptionSignal>;

    /// Applies a corrective mechanism to the step; true when it removed the
    /// fault's cause.
    fn apply_mechanism(&mut self, step_ref: Option<&str>, mechanism: LocalHandlingMechanism) -> bool;

    /// Removes poisoned memory entries, returning how many were removed.
    fn reset_poisoned_memory(&mut self) -> usize;

    /// Delivers a directive to the reasoning module; true when it yields a
    /// new plan.
    fn replan(&mut self, directive: &CorrectiveDirective) -> bool;

    /// Hands a case to the configured escalation sink.
    fn deliver_escalation(&mut self, record: EscalationRecord) -> bool;

    /// Later steps that declare a hard dependency on `step_ref`.
    fn hard_dependents(&self, step_ref: &str) -> Vec<String>;

    fn snapshot(&self, scope: ArtifactKind) -> Value;

    fn restore(&mut self, scope: ArtifactKind, state: Value);

    /// Digest over the whole environment state.
    fn digest(&self) -> String;

    /// Applies inverses for the step's recorded side effects and returns them.
    fn compensate(&mut self, thread_id: &str, step_ref: &str) -> Result<Vec<Value>, StateRecoveryError>;
}

/// Checkpointed scope a rollback restores for a given artifact.
pub fn recovery_scope(artifact: Option<ArtifactKind>) -> ArtifactKind {
    match artifact {
        Some(ArtifactKind::Memory) => ArtifactKind::Memory,
        Some(ArtifactKind::KnowledgeBase) => ArtifactKind::KnowledgeBase,
        _ => ArtifactKind::TaskFlow,
    }
}

pub const CHECKPOINT_SCOPES: [ArtifactKind; 3] =
    [ArtifactKind::Memory, ArtifactKind::KnowledgeBase, ArtifactKind::TaskFlow];

pub struct HandlingContext<'a> {
    pub classification: Classification,
    pub signal: RawExceptionSignal,
    pub mission_id: String,
    pub thread_id: String,
    pub step_ref: Option<String>,
    pub pattern: HandlerPattern,
    /// Remaining local attempts.
    pub budget: u32,
    pub policy: RetryPolicy,
    pub jitter_seed: u64,
    pub goal: String,
    /// Root-cause chain when handling follows a reclassification.
    pub evidence: Option<CausalChain>,
    /// Constraint text the chain's root violated, if known.
    pub constraint: Option<String>,
    pub log: &'a mut EventLog,
    pub env: &'a mut dyn ExecutionEnv,
    pub checkpoints: &'a CheckpointStore,
}

impl<'a> HandlingContext<'a> {
    pub fn new(
        classification: Classification,
        signal: RawExceptionSignal,
        pattern: HandlerPattern,
        log: &'a mut EventLog,
        env: &'a mut dyn ExecutionEnv,
        checkpoints: &'a CheckpointStore,
    ) -> Self {
        let policy = RetryPolicy::default();
        Self {
            budget: budget_for(pattern.local, &policy),
            thread_id: signal.thread_id.clone(),
            step_ref: signal.step_ref.clone(),
            mission_id: String::new(),
            classification,
            signal,
            pattern,
            policy,
            jitter_seed: 0,
            goal: String::new(),
            evidence: None,
            constraint: None,
            log,
            env,
            checkpoints,
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.budget = budget_for(self.pattern.local, &policy);
        self.policy = policy;
        self
    }

    fn phase(&self) -> LogPhase {
        LogPhase::from(self.classification.phase)
    }

    fn emit(&mut self, kind: EventKind, fill: impl FnOnce(NewEvent) -> NewEvent) -> Result<u64, LogError> {
        let event = fill(NewEvent::new(kind, self.phase(), &self.mission_id, &self.thread_id));
        self.log.append(event)
    }
}

/// Retry-class mechanisms get `max_attempts`; everything else gets one.
pub fn budget_for(m: LocalHandlingMechanism, policy: &RetryPolicy) -> u32 {
    if m.is_retry_class() {
        policy.max_attempts
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandlingStatus {
    Recovered,
    FailedLocal,
    Escalated,
    AbortedThread,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowResult {
    /// Re-dispatch the current step.
    Redispatch { step_ref: Option<String> },
    Skipped { step_ref: Option<String> },
    ThreadAborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot skip `{step_ref}`: {dependents:?} hard-depend on it")]
pub struct DependencyViolation {
    pub step_ref: String,
    pub dependents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub action: StateRecoveryAction,
    pub scope: Option<ArtifactKind>,
    pub digest_before: String,
    pub digest_after: String,
    pub checkpoint_id: Option<String>,
    pub inverses: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandlingOutcome {
    pub status: HandlingStatus,
    pub attempts_used: u32,
    /// Applied flow decision; absent when local handling did not succeed.
    pub flow: Option<FlowControlDecision>,
    /// Applied recovery action; absent when local handling did not succeed.
    pub recovery_applied: Option<StateRecoveryAction>,
    pub pattern_id: String,
    pub flow_result: Option<FlowResult>,
    /// Why local handling failed, for `FailedLocal`.
    pub failure: Option<String>,
}

impl HandlingOutcome {
    /// Recovered ⇒ Continue or Skip; AbortedThread ⇒ Abort.
    pub fn coupling_holds(&self) -> bool {
        match self.status {
            HandlingStatus::Recovered => {
                matches!(self.flow, Some(FlowControlDecision::Continue | FlowControlDecision::Skip))
            }
            HandlingStatus::AbortedThread => self.flow == Some(FlowControlDecision::Abort),
            HandlingStatus::FailedLocal => self.flow.is_none(),
            HandlingStatus::Escalated => self.flow.is_some(),
        }
    }
}

pub const DEPENDENCY_VIOLATION: &str = "dependency_violation";

pub fn handle(ctx: &mut HandlingContext<'_>, bindings: &HandlerBindings) -> Result<HandlingOutcome, ExecutorError> {
    let mechanism = ctx.pattern.local;
    let policy = RetryPolicy {
        max_attempts: ctx.budget.max(1),
        ..ctx.policy.clone()
    };
    let mut rng = seeded_rng(ctx.jitter_seed);
    let mut results: Vec<LocalResult> = Vec::new();
    let report = if ctx.budget == 0 {
        RetryReport {
            outcome: Err(Exhausted {
                attempts: 0,
                last: LocalResult::Failure("budget exhausted".into()),
            }),
            delays: Vec::new(),
            attempts: 0,
        }
    } else {
        retry_with_backoff(&policy, &mut rng, |_| {
            let r = bindings.attempt(mechanism, ctx);
            results.push(r.clone());
            match r {
                LocalResult::Success => Ok(()),
                other => Err(other),
            }
        })
    };
    ctx.budget = ctx.budget.saturating_sub(report.attempts);

    for (i, r) in results.iter().enumerate() {
        let delay = report.delays.get(i).copied().filter(|_| mechanism.is_retry_class());
        let pattern_id = ctx.pattern.pattern_id.clone();
        ctx.emit(EventKind::LocalAttempt, |e| {
            let mut e = e
                .with("mechanism", mechanism.name())
                .with("pattern_id", pattern_id)
                .with("attempt", i as u64 + 1)
                .with("result", r.label());
            if let LocalResult::Failure(reason) = r {
                e = e.with("reason", reason.as_str());
            }
            if let Some(d) = delay {
                e = e.with("delay_ms", d);
            }
            e
        })?;
        if let Some(d) = delay {
            ctx.log.advance_clock(d);
        }
    }

    let base = HandlingOutcome {
        status: HandlingStatus::FailedLocal,
        attempts_used: report.attempts,
        flow: None,
        recovery_applied: None,
        pattern_id: ctx.pattern.pattern_id.clone(),
        flow_result: None,
        failure: None,
    };
    if let Err(ex) = report.outcome {
        let reason = match ex.last {
            LocalResult::Failure(r) => r,
            other => other.label().to_string(),
        };
        return Ok(HandlingOutcome {
            failure: Some(reason),
            ..base
        });
    }

    let flow = ctx.pattern.flow;
    let flow_result = match apply_flow(flow, ctx)? {
        Ok(r) => r,
        Err(violation) => {
            return Ok(HandlingOutcome {
                failure: Some(format!("{DEPENDENCY_VIOLATION}: {violation}")),
                ..base
            })
        }
    };
    let recovery = apply_recovery(ctx.pattern.recovery, ctx)?;
    let status = if mechanism.is_escalation_class() {
        HandlingStatus::Escalated
    } else if flow == FlowControlDecision::Abort {
        HandlingStatus::AbortedThread
    } else {
        HandlingStatus::Recovered
    };
    Ok(HandlingOutcome {
        status,
        flow: Some(flow),
        recovery_applied: Some(recovery.action),
        flow_result: Some(flow_result),
        ..base
    })
}

/// Logs `FlowApplied` and its consequence. The outer error is a log
/// failure; the inner one a rejected skip.
pub fn apply_flow(
    decision: FlowControlDecision,
    ctx: &mut HandlingContext<'_>,
) -> Result<Result<FlowResult, DependencyViolation>, LogError> {
    let step = ctx.step_ref.clone();
    if decision == FlowControlDecision::Skip {
        if let Some(s) = step.as_deref() {
            let dependents = ctx.env.hard_dependents(s);
            if !dependents.is_empty() {
                return Ok(Err(DependencyViolation {
                    step_ref: s.to_string(),
                    dependents,
                }));
            }
        }
    }
    ctx.emit(EventKind::FlowApplied, |e| {
        let e = e.with("decision", decision.name());
        match step.as_deref() {
            Some(s) => e.with("step_id", s),
            None => e,
        }
    })?;
    let result = match decision {
        FlowControlDecision::Continue => FlowResult::Redispatch { step_ref: step },
        FlowControlDecision::Skip => {
            if let Some(s) = step.as_deref() {
                ctx.emit(EventKind::StepSkipped, |e| e.with("step_id", s))?;
            }
            FlowResult::Skipped { step_ref: step }
        }
        FlowControlDecision::Abort => {
            let reason = format!("{} aborted the thread", ctx.pattern.pattern_id);
            ctx.emit(EventKind::ThreadAborted, |e| e.with("reason", reason))?;
            FlowResult::ThreadAborted
        }
    };
    Ok(Ok(result))
}

pub fn apply_recovery(
    action: StateRecoveryAction,
    ctx: &mut HandlingContext<'_>,
) -> Result<RecoveryResult, ExecutorError> {
    let digest_before = ctx.env.digest();
    let mut result = RecoveryResult {
        action,
        scope: None,
        digest_before: digest_before.clone(),
        digest_after: digest_before,
        checkpoint_id: None,
        inverses: Vec::new(),
    };
    match action {
        StateRecoveryAction::NoOp => {}
        StateRecoveryAction::Rollback => {
            let scope = recovery_scope(ctx.classification.artifact);
            let cp = ctx
                .checkpoints
                .latest(&ctx.thread_id, scope)
                .ok_or_else(|| StateRecoveryError::NoCheckpoint {
                    thread_id: ctx.thread_id.clone(),
                    scope,
                })?;
            let state = ctx.checkpoints.restore(&cp.checkpoint_id).map_err(StateRecoveryError::from)?;
            ctx.env.restore(scope, state);
            let actual = state_digest(&ctx.env.snapshot(scope));
            if actual != cp.state_digest {
                return Err(StateRecoveryError::DigestMismatch {
                    expected: cp.state_digest.clone(),
                    actual,
                }
                .into());
            }
            result.scope = Some(scope);
            result.checkpoint_id = Some(cp.checkpoint_id.clone());
        }
        StateRecoveryAction::Compensate => {
            let step = ctx.step_ref.clone().ok_or(StateRecoveryError::NoStep)?;
            result.inverses = ctx.env.compensate(&ctx.thread_id, &step)?;
        }
    }
    result.digest_after = ctx.env.digest();
    let r = &result;
    ctx.emit(EventKind::RecoveryApplied, |e| {
        let mut e = e
            .with("action", r.action.name())
            .with("digest_before", r.digest_before.as_str())
            .with("digest_after", r.digest_after.as_str());
        if let Some(scope) = r.scope {
            e = e.with("scope", scope.name());
        }
        if let Some(cp) = &r.checkpoint_id {
            e = e.with("checkpoint_id", cp.as_str());
        }
        if !r.inverses.is_empty() {
            e = e.with("inverses", json!(r.inverses));
        }
        e
    })?;
    Ok(result)
}
