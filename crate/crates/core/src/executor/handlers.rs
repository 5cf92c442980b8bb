//! Bindings from local handling mechanisms to executable handlers.
//!
//! Mechanisms the simulator can act on have concrete handlers; the rest are
//! registered stubs answering `NotImplemented`, which routes to escalation.

use std::collections::BTreeMap;

use serde_json::json;

use super::{HandlingContext, InvokeMode, LocalResult};
use crate::agentops::event::{EventKind, LogPhase, NewEvent};
use crate::escalation::{synthesize_corrective_directive, EscalationRecord};
use crate::registry::LocalHandlingMechanism as M;

pub trait MechanismHandler {
    fn mechanism(&self) -> M;

    /// One local attempt. Must be deterministic given the context.
    fn attempt(&self, ctx: &mut HandlingContext<'_>) -> LocalResult;
}

/// Mechanisms with a concrete handler.
pub const CONCRETE: [M; 12] = [
    M::RetryWithBackoff,
    M::SwitchTool,
    M::Fallback,
    M::SchemaValidation,
    M::OutputTruncation,
    M::ResetMemory,
    M::PlanRepair,
    M::AbortTaskChain,
    M::TimeoutEscalation,
    M::EscalateToHuman,
    M::EscalateUiFailure,
    M::PeerConfirmation,
];

pub fn is_concrete(m: M) -> bool {
    CONCRETE.contains(&m)
}

/// The shipped handler for any mechanism.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinHandler(pub M);

impl MechanismHandler for BuiltinHandler {
    fn mechanism(&self) -> M {
        self.0
    }

    fn attempt(&self, ctx: &mut HandlingContext<'_>) -> LocalResult {
        match self.0 {
            M::RetryWithBackoff => reinvoke(ctx, InvokeMode::Primary),
            M::SwitchTool => {
                let step = ctx.step_ref.clone();
                ctx.env.apply_mechanism(step.as_deref(), M::SwitchTool);
                reinvoke(ctx, InvokeMode::Alternate)
            }
            m @ (M::Fallback | M::SchemaValidation | M::OutputTruncation | M::PeerConfirmation) => {
                let step = ctx.step_ref.clone();
                if ctx.env.apply_mechanism(step.as_deref(), m) {
                    LocalResult::Success
                } else {
                    LocalResult::Failure(format!("{m} did not remove the fault"))
                }
            }
            M::ResetMemory => match ctx.env.reset_poisoned_memory() {
                0 => LocalResult::Failure("no poisoned memory entries found".into()),
                _ => LocalResult::Success,
            },
            M::PlanRepair => plan_repair(ctx),
            M::AbortTaskChain => LocalResult::Success,
            M::TimeoutEscalation | M::EscalateToHuman | M::EscalateUiFailure => {
                let record = EscalationRecord {
                    timestamp: ctx.log.now(),
                    thread_id: ctx.thread_id.clone(),
                    classification: ctx.classification.clone(),
                    chain: ctx.evidence.as_ref().map(|c| c.seqs()).unwrap_or_default(),
                    payload: json!({
                        "signal": ctx.signal,
                        "pattern_id": ctx.pattern.pattern_id,
                        "mechanism": self.0.name(),
                    }),
                };
                if ctx.env.deliver_escalation(record) {
                    LocalResult::Success
                } else {
                    LocalResult::NeedsEscalation
                }
            }
            _ => LocalResult::NotImplemented,
        }
    }
}

fn reinvoke(ctx: &mut HandlingContext<'_>, mode: InvokeMode) -> LocalResult {
    let Some(step) = ctx.step_ref.clone() else {
        return LocalResult::Failure("no plan step to re-invoke".into());
    };
    match ctx.env.reinvoke(&ctx.thread_id, &step, mode) {
        Ok(()) => LocalResult::Success,
        Err(sig) => LocalResult::Failure(sig.message),
    }
}

/// Needs a causal chain rooted at a reasoning/planning event and the
/// constraint text the root violated. Logs the directive before handing it
/// to the environment.
fn plan_repair(ctx: &mut HandlingContext<'_>) -> LocalResult {
    let Some(chain) = ctx.evidence.as_ref() else {
        return LocalResult::Failure("plan repair needs root-cause evidence".into());
    };
    let Some(constraint) = ctx.constraint.as_deref() else {
        return LocalResult::Failure("no violated constraint identified".into());
    };
    let directive = match synthesize_corrective_directive(chain.root(), &chain.root_entities(), &ctx.goal, constraint) {
        Ok(d) => d,
        Err(e) => return LocalResult::Failure(e.to_string()),
    };
    let event = NewEvent::new(EventKind::DirectiveIssued, LogPhase::RP, &ctx.mission_id, &ctx.thread_id)
        .with("directive", directive.text())
        .with("constraints", directive.injected_constraints.clone())
        .with("provenance", directive.provenance)
        .with("target", "ReasoningModule");
    if let Err(e) = ctx.log.append(event) {
        return LocalResult::Failure(e.to_string());
    }
    if ctx.env.replan(&directive) {
        LocalResult::Success
    } else {
        LocalResult::Failure("reasoning module produced no compliant plan".into())
    }
}

/// Handler table. Every mechanism starts bound to its [`BuiltinHandler`];
/// callers may rebind individual mechanisms.
pub struct HandlerBindings {
    custom: BTreeMap<M, Box<dyn MechanismHandler>>,
}

impl Default for HandlerBindings {
    fn default() -> Self {
        Self::standard()
    }
}

impl HandlerBindings {
    pub fn standard() -> Self {
        Self { custom: BTreeMap::new() }
    }

    pub fn bind(&mut self, handler: Box<dyn MechanismHandler>) {
        self.custom.insert(handler.mechanism(), handler);
    }

    pub fn attempt(&self, m: M, ctx: &mut HandlingContext<'_>) -> LocalResult {
        match self.custom.get(&m) {
            Some(h) => h.attempt(ctx),
            None => BuiltinHandler(m).attempt(ctx),
        }
    }
}
